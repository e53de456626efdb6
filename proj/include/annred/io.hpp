#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "annred/asymptotics.hpp"
#include "annred/errors.hpp"
#include "annred/grid.hpp"

namespace annred {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Writes to a sibling temp file and renames it over `path`.
inline void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// 64-bit FNV-1a, used to tag persisted rows with the configuration they came from.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Field dumps: <stem>.bin holds float64 little-endian values, row-major with
// the radial index outer; <stem>.json describes the grid.

inline json grid_to_json(const Grid& g) {
  return json{{"kind", to_string(g.kind())},
              {"dimension", g.dimension()},
              {"n_radial", g.n_radial()},
              {"n_angular", g.n_angular()},
              {"radial_nodes", g.radial_nodes()},
              {"angular_nodes", g.angular_nodes()},
              {"radial_edges", g.radial_edges()},
              {"angular_edges", g.angular_edges()}};
}

inline GridPtr grid_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "reduced" && kind != "annulus") throw ShapeError("grid json: unknown kind " + kind);
  return std::make_shared<const Grid>(kind == "reduced" ? GridKind::reduced : GridKind::annulus,
                                      j.at("dimension").get<int>(), j.at("radial_nodes").get<std::vector<double>>(),
                                      j.at("angular_nodes").get<std::vector<double>>(),
                                      j.at("radial_edges").get<std::vector<double>>(),
                                      j.at("angular_edges").get<std::vector<double>>());
}

inline std::string encode_le(const Eigen::VectorXd& v) {
  std::string bytes(static_cast<std::size_t>(v.size()) * 8, '\0');
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(v[k]);
    for (int b = 0; b < 8; ++b) bytes[static_cast<std::size_t>(k) * 8 + b] = static_cast<char>((u >> (8 * b)) & 0xff);
  }
  return bytes;
}

inline Eigen::VectorXd decode_le(const std::string& bytes) {
  if (bytes.size() % 8 != 0) throw ShapeError("field dump: size is not a multiple of 8");
  Eigen::VectorXd v(static_cast<Eigen::Index>(bytes.size() / 8));
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b)
      u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(k) * 8 + b])) << (8 * b);
    v[k] = std::bit_cast<double>(u);
  }
  return v;
}

inline void dump_field(const Field& f, const fs::path& stem, const json& meta = json::object()) {
  fs::path bin = stem, side = stem;
  bin += ".bin";
  side += ".json";
  json j{{"format", "float64 little-endian, row-major (radial index outer)"},
         {"values", bin.filename().string()},
         {"grid", grid_to_json(f.grid())},
         {"meta", meta}};
  write_atomic(bin, encode_le(f.values()));
  write_atomic(side, j.dump(2) + "\n");
}

inline Field load_field(const fs::path& stem) {
  fs::path bin = stem, side = stem;
  bin += ".bin";
  side += ".json";
  const json j = json::parse(read_file(side));
  auto grid = grid_from_json(j.at("grid"));
  return Field(grid, decode_le(read_file(bin)));
}

// ---------------------------------------------------------------------------
// Sweep rows.

inline json row_to_json(const SweepRow& r) {
  return json{{"lambda", r.lambda},
              {"ok", r.ok},
              {"error", r.error},
              {"energy", r.energy},
              {"residual", r.residual},
              {"iterations", r.iterations},
              {"energy_ratio", r.energy_ratio},
              {"peak_rho", r.peak_rho},
              {"peak_phi", r.peak_phi},
              {"inner_excess", r.inner_excess},
              {"boundary_distance", r.boundary_distance},
              {"scaled_distance", r.scaled_distance},
              {"on_axis", r.on_axis},
              {"sup_outside", r.sup_outside},
              {"morse_index", r.morse_index},
              {"mu1", r.mu1},
              {"mu1_bound", r.mu1_bound},
              {"phi_negative", r.phi_negative},
              {"phi_q", r.phi_q},
              {"nodal_energy", r.nodal_energy},
              {"nodal_regions", r.nodal_regions},
              {"nodal_morse", r.nodal_morse},
              {"nodal_separation", r.nodal_separation},
              {"nodal_lifted_separation", r.nodal_lifted_separation}};
}

inline SweepRow row_from_json(const json& j) {
  SweepRow r;
  r.lambda = j.at("lambda").get<double>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.energy = j.at("energy").get<double>();
  r.residual = j.at("residual").get<double>();
  r.iterations = j.at("iterations").get<int>();
  r.energy_ratio = j.at("energy_ratio").get<double>();
  r.peak_rho = j.at("peak_rho").get<double>();
  r.peak_phi = j.at("peak_phi").get<double>();
  r.inner_excess = j.at("inner_excess").get<double>();
  r.boundary_distance = j.at("boundary_distance").get<double>();
  r.scaled_distance = j.at("scaled_distance").get<double>();
  r.on_axis = j.at("on_axis").get<bool>();
  r.sup_outside = j.at("sup_outside").get<double>();
  r.morse_index = j.at("morse_index").get<int>();
  r.mu1 = j.at("mu1").get<double>();
  r.mu1_bound = j.at("mu1_bound").get<double>();
  r.phi_negative = j.at("phi_negative").get<int>();
  r.phi_q = j.at("phi_q").get<std::vector<double>>();
  r.nodal_energy = j.at("nodal_energy").get<double>();
  r.nodal_regions = j.at("nodal_regions").get<int>();
  r.nodal_morse = j.at("nodal_morse").get<int>();
  r.nodal_separation = j.at("nodal_separation").get<double>();
  r.nodal_lifted_separation = j.at("nodal_lifted_separation").get<double>();
  return r;
}

/// File-name fragment for a lambda value, exact for any double.
inline std::string lambda_tag(double lambda) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", lambda);
  std::string s = buf;
  for (char& c : s)
    if (c == '.') c = 'p';
    else if (c == '+') c = 'P';
    else if (c == '-') c = 'm';
  return s;
}

// ---------------------------------------------------------------------------
// CSV with a commented schema header.

struct CsvColumn {
  std::string name;
  std::string unit;
  std::string description;
  std::function<std::string(const SweepRow&)> cell;
};

inline std::string fmt_real(double x) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10e", x);
  return buf;
}

inline std::vector<CsvColumn> sweep_columns(int k_min, int k_max) {
  auto real = [](double SweepRow::*m) { return [m](const SweepRow& r) { return fmt_real(r.*m); }; };
  auto integer = [](int SweepRow::*m) { return [m](const SweepRow& r) { return std::to_string(r.*m); }; };
  auto flag = [](bool SweepRow::*m) { return [m](const SweepRow& r) { return std::string(r.*m ? "1" : "0"); }; };
  std::vector<CsvColumn> cols = {
      {"lambda", "1", "linear coefficient", real(&SweepRow::lambda)},
      {"converged", "bool", "positive solve converged and diagnostics completed", flag(&SweepRow::ok)},
      {"energy", "1", "J_lambda(v_lambda), dimensionless", real(&SweepRow::energy)},
      {"energy_ratio", "1", "J_lambda / (lambda^((p+1)/(p-1)-N/2) (2R1)^((N-2)/2) I(z))", real(&SweepRow::energy_ratio)},
      {"residual", "1", "weighted residual norm of the positive solution", real(&SweepRow::residual)},
      {"iterations", "count", "descent iterations", integer(&SweepRow::iterations)},
      {"peak_rho", "length", "|P_lambda|, parabolically refined", real(&SweepRow::peak_rho)},
      {"peak_phi", "rad", "polar angle of P_lambda", real(&SweepRow::peak_phi)},
      {"inner_excess", "length", "|P_lambda| - R1", real(&SweepRow::inner_excess)},
      {"boundary_distance", "length", "d(P_lambda, boundary of D)", real(&SweepRow::boundary_distance)},
      {"scaled_distance", "1", "sqrt(lambda) d(P_lambda, boundary of D)", real(&SweepRow::scaled_distance)},
      {"on_axis", "bool", "peak node on the symmetry axis", flag(&SweepRow::on_axis)},
      {"sup_outside", "1", "max |v_lambda| outside the ball of radius 0.2(R2-R1) around (R1, phi=0)",
       real(&SweepRow::sup_outside)},
      {"morse_index", "count", "negative eigenvalues of the linearization (axially symmetric class)",
       integer(&SweepRow::morse_index)},
      {"mu1", "1", "first eigenvalue of the linearization in the 1/(2 rho) weight", real(&SweepRow::mu1)},
      {"mu1_bound", "1", "(1-p) lambda", real(&SweepRow::mu1_bound)},
      {"phi_negative", "count", "#{k in range : Q(Phi^k) < 0}", integer(&SweepRow::phi_negative)},
  };
  for (int k = k_min; k <= k_max; ++k) {
    const std::size_t idx = static_cast<std::size_t>(k - k_min);
    cols.push_back({"Q_phi_" + std::to_string(k), "1", "Q(Phi^k) for k = " + std::to_string(k),
                    [idx](const SweepRow& r) { return idx < r.phi_q.size() ? fmt_real(r.phi_q[idx]) : std::string("nan"); }});
  }
  cols.push_back({"nodal_energy", "1", "J_lambda of the least-energy nodal solution", real(&SweepRow::nodal_energy)});
  cols.push_back({"nodal_regions", "count", "nodal regions of the nodal solution", integer(&SweepRow::nodal_regions)});
  cols.push_back({"nodal_morse", "count", "Morse index of the nodal solution", integer(&SweepRow::nodal_morse)});
  cols.push_back({"nodal_separation", "length", "|P+ - P-| in D", real(&SweepRow::nodal_separation)});
  cols.push_back({"nodal_lifted_separation", "length", "distance between the lifted peaks in R^2m",
                  real(&SweepRow::nodal_lifted_separation)});
  cols.push_back({"field_file", "path", "stored positive solution (relative to the output directory)",
                  [](const SweepRow& r) { return "fields/positive_l" + lambda_tag(r.lambda) + ".bin"; }});
  return cols;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows, int k_min, int k_max) {
  const auto cols = sweep_columns(k_min, k_max);
  std::string out;
  out += "# annred sweep table; one row per lambda\n";
  for (const auto& c : cols) out += "# column " + c.name + " [" + c.unit + "]: " + c.description + "\n";
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i].name;
  out += "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i].cell(r);
    out += "\n";
  }
  return out;
}

inline json report_flags_json(const SweepReport& rep) {
  json flags = json::array();
  for (const auto& f : rep.flags) flags.push_back({{"name", f.name}, {"status", to_string(f.status)}, {"detail", f.detail}});
  return flags;
}

}  // namespace annred
