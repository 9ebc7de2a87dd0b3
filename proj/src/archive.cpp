// Archive file layout:
//   line 1  "# nestwave-archive 1"
//   line 2  "# " followed by a one-line JSON header: label, meta, parameter
//           blocks with offsets, coordinate names, shape, per-chain
//           diagnostics and R-hat
//   line 3  "#data"
//   then little-endian binary columns in this order:
//     draws        float64[chains * draws_per_chain * dimension]
//     loglik       float64[chains * draws_per_chain * observations]
//     accept       float64[chains * draws_per_chain]
//     energy_error float64[chains * draws_per_chain]
//     tree_depth   int32  [chains * draws_per_chain]
//     divergent    uint8  [chains * draws_per_chain]

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "nestwave/errors.hpp"
#include "nestwave/sampler.hpp"

namespace nestwave {
namespace {

using nlohmann::json;

constexpr const char* kMagic = "# nestwave-archive 1";

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double null_to_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

template <typename T>
void write_raw(std::ostream& out, const std::vector<T>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void read_raw(std::istream& in, std::vector<T>& v, std::size_t n, const char* what) {
  v.resize(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(T)) {
    throw ValidationError(std::string("archive truncated while reading ") + what);
  }
}

}  // namespace

void write_archive(std::ostream& out, const SampleArchive& a) {
  json h;
  h["label"] = a.label;
  h["meta"] = a.meta;
  h["chains"] = a.chains;
  h["draws_per_chain"] = a.draws_per_chain;
  h["dimension"] = a.dimension;
  h["observations"] = a.observations;
  json blocks = json::array();
  for (const auto& b : a.blocks) blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size}});
  h["blocks"] = blocks;
  h["coordinates"] = a.coordinate_names;
  json diags = json::array();
  for (const auto& d : a.diagnostics) {
    json jd;
    jd["step_size"] = d.step_size;
    jd["inv_metric"] = d.inv_metric;
    jd["mean_accept"] = d.mean_accept;
    jd["divergences"] = d.divergences;
    jd["warmup_divergences"] = d.warmup_divergences;
    jd["max_depth_hits"] = d.max_depth_hits;
    jd["mean_abs_energy_error"] = d.mean_abs_energy_error;
    jd["leapfrogs"] = d.leapfrogs;
    diags.push_back(jd);
  }
  h["diagnostics"] = diags;
  json rh = json::array();
  for (const auto& r : a.rhat) rh.push_back(r.defined ? nan_to_null(r.value) : json(nullptr));
  h["rhat"] = rh;

  out << kMagic << '\n' << "# " << h.dump() << '\n' << "#data\n";
  write_raw(out, a.draws);
  write_raw(out, a.loglik);
  write_raw(out, a.accept);
  write_raw(out, a.energy_error);
  std::vector<std::int32_t> depth(a.tree_depth.begin(), a.tree_depth.end());
  write_raw(out, depth);
  write_raw(out, a.divergent);
}

SampleArchive read_archive(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw ValidationError("not a nestwave archive");
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw ValidationError("archive header line missing");
  }
  json h;
  try {
    h = json::parse(line.substr(2));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("archive header is not valid JSON: ") + e.what());
  }
  if (!std::getline(in, line) || line != "#data") throw ValidationError("archive data marker missing");

  SampleArchive a;
  try {
    a.label = h.at("label").get<std::string>();
    a.meta = h.at("meta").get<std::map<std::string, std::string>>();
    a.chains = h.at("chains").get<std::size_t>();
    a.draws_per_chain = h.at("draws_per_chain").get<std::size_t>();
    a.dimension = h.at("dimension").get<std::size_t>();
    a.observations = h.at("observations").get<std::size_t>();
    for (const auto& b : h.at("blocks")) {
      a.blocks.push_back({b.at("name").get<std::string>(), b.at("offset").get<std::size_t>(),
                          b.at("size").get<std::size_t>()});
    }
    a.coordinate_names = h.at("coordinates").get<std::vector<std::string>>();
    for (const auto& jd : h.at("diagnostics")) {
      ChainDiagnostics d;
      d.step_size = jd.at("step_size").get<double>();
      d.inv_metric = jd.at("inv_metric").get<std::vector<double>>();
      d.mean_accept = jd.at("mean_accept").get<double>();
      d.divergences = jd.at("divergences").get<int>();
      d.warmup_divergences = jd.at("warmup_divergences").get<int>();
      d.max_depth_hits = jd.at("max_depth_hits").get<int>();
      d.mean_abs_energy_error = jd.at("mean_abs_energy_error").get<double>();
      d.leapfrogs = jd.at("leapfrogs").get<long>();
      a.diagnostics.push_back(std::move(d));
    }
    for (const auto& r : h.at("rhat")) {
      a.rhat.push_back(r.is_null() ? RhatResult{std::numeric_limits<double>::quiet_NaN(), false}
                                   : RhatResult{null_to_nan(r), true});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("archive header field missing or malformed: ") + e.what());
  }

  const std::size_t n = a.total_draws();
  read_raw(in, a.draws, n * a.dimension, "draws");
  read_raw(in, a.loglik, n * a.observations, "loglik");
  read_raw(in, a.accept, n, "accept");
  read_raw(in, a.energy_error, n, "energy_error");
  std::vector<std::int32_t> depth;
  read_raw(in, depth, n, "tree_depth");
  a.tree_depth.assign(depth.begin(), depth.end());
  read_raw(in, a.divergent, n, "divergent");
  return a;
}

void write_archive_file(const std::string& path, const SampleArchive& archive) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write archive " + path);
  write_archive(out, archive);
}

SampleArchive read_archive_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open archive " + path);
  return read_archive(in);
}

}  // namespace nestwave
