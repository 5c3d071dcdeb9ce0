#ifndef KGLAB_IO_HPP
#define KGLAB_IO_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "field.hpp"

namespace kglab {

namespace fs = std::filesystem;

inline std::uint64_t fnv1a64(const std::string &s)
{
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t h)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Write through a temporary file in the same directory, then rename.
inline void atomic_write(const fs::path &path, const std::string &bytes)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error(ErrorKind::io, "cannot open " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw Error(ErrorKind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec)
    throw Error(ErrorKind::io, "rename to " + path.string() + " failed: " + ec.message());
}

inline std::string read_file(const fs::path &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline fs::path sidecar_path(const fs::path &p)
{
  fs::path s = p;
  s += ".json";
  return s;
}

inline nlohmann::json grid_header(const RadialGrid &g)
{
  return {{"n", g.n()}, {"r_max", g.r_max()}, {"N", g.dim()}, {"boundary", to_string(g.boundary())},
          {"sponge_width", g.sponge_width()}};
}

inline std::shared_ptr<const RadialGrid> grid_from_header(const nlohmann::json &h)
{
  const std::string bc = h.value("boundary", std::string("dirichlet"));
  return std::make_shared<const RadialGrid>(h.at("r_max").get<double>(), h.at("n").get<std::size_t>(),
                                            h.at("N").get<int>(),
                                            bc == "neumann" ? Boundary::neumann : Boundary::dirichlet,
                                            h.value("sponge_width", 0.0));
}

/// Flat binary of interleaved (re, im) doubles: u1 then u2. The sidecar holds the grid header and `meta`.
inline void save_profile(const fs::path &path, const FieldPair &u, nlohmann::json meta = nlohmann::json::object())
{
  u.check();
  std::string bytes;
  bytes.reserve(u.n() * 4 * sizeof(double));
  for (const cvec *c : {&u.u1, &u.u2})
    for (const cplx &z : *c) {
      const double re = z.real(), im = z.imag();
      bytes.append(reinterpret_cast<const char *>(&re), sizeof re);
      bytes.append(reinterpret_cast<const char *>(&im), sizeof im);
    }
  meta["grid"] = grid_header(*u.grid);
  meta["layout"] = "u1,u2 interleaved re,im float64";
  atomic_write(path, bytes);
  atomic_write(sidecar_path(path), meta.dump(2));
}

inline nlohmann::json load_sidecar(const fs::path &path) { return nlohmann::json::parse(read_file(sidecar_path(path))); }

inline FieldPair load_profile(const fs::path &path)
{
  const auto meta = load_sidecar(path);
  auto g = grid_from_header(meta.at("grid"));
  const std::string bytes = read_file(path);
  const std::size_t n = g->n();
  if (bytes.size() != n * 4 * sizeof(double))
    throw Error(ErrorKind::io, "profile size does not match its header");
  FieldPair u(g);
  const double *d = reinterpret_cast<const double *>(bytes.data());
  for (std::size_t j = 0; j < n; ++j) {
    u.u1[j] = {d[2 * j], d[2 * j + 1]};
    u.u2[j] = {d[2 * n + 2 * j], d[2 * n + 2 * j + 1]};
  }
  return u;
}

} // namespace kglab

#endif // KGLAB_IO_HPP
