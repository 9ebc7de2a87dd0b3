#include "nestwave/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "nestwave/errors.hpp"
#include "nestwave/simulation.hpp"

namespace nestwave {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s, const char* file, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(std::string(file) + ": bad number '" + s + "' on line " + std::to_string(line));
  }
}

long to_long(const std::string& s, const char* file, std::size_t line) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(std::string(file) + ": bad integer '" + s + "' on line " + std::to_string(line));
  }
}

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

// Reads a header-checked CSV into rows of fields.
std::vector<std::vector<std::string>> read_rows(std::istream& in, const std::string& header,
                                                std::size_t fields, const char* file) {
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw ValidationError(std::string(file) + ": unexpected header");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != fields) {
      throw ValidationError(std::string(file) + ": expected " + std::to_string(fields) +
                            " fields on line " + std::to_string(n));
    }
    rows.push_back(std::move(f));
  }
  return rows;
}

std::uint64_t fit_seed(std::uint64_t base, std::size_t node, Variant v) {
  return base + 7919ULL * (node + 1) + 104729ULL * static_cast<std::uint64_t>(v);
}

void open_out(std::ofstream& out, const fs::path& p) {
  out.open(p, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + p.string());
}

}  // namespace

// ---------------------------------------------------------------------------

IngestSummary summarize(const HaulDataset& data) {
  IngestSummary s;
  s.records = data.size();
  s.trips = data.num_trips();
  s.quarters = data.num_quarters();
  s.categories = data.category_names();
  s.totals = data.category_totals();
  if (!data.records().empty()) {
    s.first_quarter = data.record(0).quarter;
    s.last_quarter = s.first_quarter;
    for (const auto& r : data.records()) {
      s.first_quarter = std::min(s.first_quarter, r.quarter);
      s.last_quarter = std::max(s.last_quarter, r.quarter);
    }
  }
  for (auto t : s.totals) s.grand_total += t;
  std::vector<std::size_t> order(s.totals.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s.totals[a] > s.totals[b]; });
  if (!order.empty() && s.grand_total > 0) {
    s.top_category = order.front();
    const double g = static_cast<double>(s.grand_total);
    s.top_share = static_cast<double>(s.totals[order[0]]) / g;
    std::int64_t top3 = 0;
    for (std::size_t i = 0; i < std::min<std::size_t>(3, order.size()); ++i) top3 += s.totals[order[i]];
    s.top3_share = static_cast<double>(top3) / g;
  }
  return s;
}

void print_ingest_summary(std::ostream& out, const IngestSummary& s) {
  out << "records (M): " << s.records << '\n';
  out << "trips (J): " << s.trips << '\n';
  out << "time points (T): " << s.quarters << " (observed " << s.first_quarter << ".." << s.last_quarter
      << ")\n";
  out << "categories (K): " << s.categories.size() << '\n';
  out << "total count: " << s.grand_total << '\n';
  for (std::size_t k = 0; k < s.categories.size(); ++k) {
    const double share = s.grand_total > 0 ? 100.0 * static_cast<double>(s.totals[k]) / s.grand_total : 0.0;
    out << "  " << s.categories[k] << ": " << s.totals[k] << " (" << std::fixed << std::setprecision(1)
        << share << "%)\n";
    out.unsetf(std::ios::floatfield);
  }
  if (!s.categories.empty()) {
    out << "top category: " << s.categories[s.top_category] << " with " << std::fixed
        << std::setprecision(1) << 100.0 * s.top_share << "% of all counts; top three "
        << 100.0 * s.top3_share << "%\n";
    out.unsetf(std::ios::floatfield);
  }
}

ModelDesign design_for(int num_quarters, int levels) {
  if (num_quarters < 1) throw ValidationError("dataset spans no time points");
  const int d = levels > 0 ? levels : levels_for(num_quarters);
  WaveletBasis basis(d);
  Interpolation interp = Interpolation::for_lattice(num_quarters, basis.size());
  return {std::move(basis), std::move(interp)};
}

BranchPosterior make_model(const HaulDataset& data, const NestingTree& tree, std::size_t node_index,
                           Variant variant, const ModelDesign& design, const HyperConfig& hyper) {
  if (data.num_categories() != tree.num_categories()) {
    throw ValidationError("dataset has " + std::to_string(data.num_categories()) +
                          " categories but the nesting tree has " +
                          std::to_string(tree.num_categories()));
  }
  if (variant == Variant::Multinomial) return BranchPosterior(data, design.basis, design.interp, hyper);
  if (node_index >= tree.nodes().size()) throw ValidationError("tree node index out of range");
  return BranchPosterior(aggregate_branch(data, tree.nodes()[node_index]), variant, design.basis,
                         design.interp, hyper);
}

SampleArchive fit_model(const BranchPosterior& model, const SamplerConfig& config,
                        const std::vector<std::vector<double>>& inits) {
  Target target;
  target.dimension = model.dimension();
  target.log_density = [&model](std::span<const double> x, std::span<double> g) {
    return model.log_density(x, g);
  };
  target.pointwise = [&model](std::span<const double> x) { return model.pointwise_loglik(x); };
  target.initial = [&model](Rng& rng) { return model.initial_point(rng); };
  SampleArchive a = run_sampler(target, config, inits);
  a.label = model.label();
  a.coordinate_names = model.layout().coordinate_names();
  for (const auto& b : model.layout().blocks()) a.blocks.push_back({b.name, b.offset, b.size});
  a.meta["branch"] = model.label();
  a.meta["variant"] = std::string(variant_name(model.variant()));
  a.meta["levels"] = std::to_string(model.basis().levels());
  a.meta["time_points"] = std::to_string(model.interpolation().rows());
  return a;
}

// ---------------------------------------------------------------------------

std::optional<double> WaicTable::at(const std::string& row, const std::string& variant) const {
  const auto r = std::find(rows.begin(), rows.end(), row);
  const auto c = std::find(variants.begin(), variants.end(), variant);
  if (r == rows.end() || c == variants.end()) return std::nullopt;
  return cells[static_cast<std::size_t>(r - rows.begin())][static_cast<std::size_t>(c - variants.begin())];
}

WaicTable build_waic_table(const std::vector<BranchFit>& fits, const NestingTree& tree,
                           const std::vector<Variant>& variants) {
  WaicTable t;
  for (Variant v : variants) t.variants.emplace_back(variant_name(v));
  for (const auto& n : tree.nodes()) t.rows.push_back(n.label);
  t.rows.emplace_back("Total");
  t.cells.assign(t.rows.size(), std::vector<std::optional<double>>(variants.size()));
  const std::size_t total_row = t.rows.size() - 1;

  auto lookup = [&](const std::string& branch, Variant v) -> const BranchFit* {
    for (const auto& f : fits) {
      if (f.branch == branch && f.variant == v && f.status == FitStatus::Ok) return &f;
    }
    return nullptr;
  };
  for (std::size_t c = 0; c < variants.size(); ++c) {
    const Variant v = variants[c];
    if (v == Variant::Multinomial) {
      if (const BranchFit* f = lookup("multinomial", v)) t.cells[total_row][c] = f->waic.waic;
      continue;
    }
    double sum = 0.0;
    bool complete = true;
    for (std::size_t r = 0; r < tree.nodes().size(); ++r) {
      if (const BranchFit* f = lookup(tree.nodes()[r].label, v)) {
        t.cells[r][c] = f->waic.waic;
        sum += f->waic.waic;
      } else {
        complete = false;
      }
    }
    if (complete) t.cells[total_row][c] = sum;
  }
  return t;
}

void write_waic_table(std::ostream& out, const WaicTable& table) {
  out << "branch";
  for (const auto& v : table.variants) out << ',' << csv_field(v);
  out << '\n';
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << csv_field(table.rows[r]);
    for (const auto& cell : table.cells[r]) out << ',' << (cell ? fmt_double(*cell) : "-");
    out << '\n';
  }
}

WaicTable read_waic_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("WAIC table is empty");
  auto header = split_csv(line);
  if (header.empty() || header.front() != "branch") throw ValidationError("WAIC table: unexpected header");
  WaicTable t;
  t.variants.assign(header.begin() + 1, header.end());
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw ValidationError("WAIC table: wrong field count on line " + std::to_string(n));
    }
    t.rows.push_back(f.front());
    std::vector<std::optional<double>> row;
    for (std::size_t i = 1; i < f.size(); ++i) {
      if (f[i] == "-") {
        row.emplace_back();
      } else {
        row.emplace_back(to_double(f[i], "WAIC table", n));
      }
    }
    t.cells.push_back(std::move(row));
  }
  return t;
}

const BranchFit* FitBundle::find(const std::string& branch, Variant variant) const {
  for (const auto& f : fits) {
    if (f.branch == branch && f.variant == variant) return &f;
  }
  return nullptr;
}

std::size_t FitBundle::failures() const {
  return static_cast<std::size_t>(
      std::count_if(fits.begin(), fits.end(), [](const BranchFit& f) { return f.status != FitStatus::Ok; }));
}

bool FitBundle::all_failed() const { return !fits.empty() && failures() == fits.size(); }

// ---------------------------------------------------------------------------

namespace {

BranchFit run_one(const HaulDataset& data, const NestingTree& tree, std::size_t node, Variant v,
                  const ModelDesign& design, const RunConfig& cfg, const BranchFit* warm) {
  BranchFit fit;
  fit.node_index = v == Variant::Multinomial ? tree.nodes().size() : node;
  fit.branch = v == Variant::Multinomial ? "multinomial" : tree.nodes()[node].label;
  fit.variant = v;
  try {
    auto model = std::make_shared<const BranchPosterior>(make_model(data, tree, node, v, design, cfg.hyper));
    fit.model = model;
    SamplerConfig sc = cfg.sampler;
    sc.seed = fit_seed(cfg.sampler.seed, fit.node_index, v);
    std::vector<std::vector<double>> inits;
    if (warm && warm->status == FitStatus::Ok && warm->model) {
      for (std::size_t c = 0; c < warm->archive.chains; ++c) {
        inits.push_back(model->embed(*warm->model, warm->archive.last_draw(c)));
      }
      if (inits.size() != static_cast<std::size_t>(sc.chains)) inits.resize(1);
      fit.warm_started = true;
    }
    fit.archive = fit_model(*model, sc, inits);
    fit.archive.meta["warm_start"] = fit.warm_started ? "yes" : "no";
    fit.waic = waic(fit.archive);
  } catch (const SamplerError& e) {
    fit.status = FitStatus::SamplerFailure;
    fit.error = e.what();
  } catch (const std::exception& e) {
    fit.status = FitStatus::ValidationFailure;
    fit.error = e.what();
  }
  return fit;
}

std::vector<Variant> nested_in_chain_order(const std::vector<Variant>& variants) {
  std::vector<Variant> out;
  for (Variant v : kNestedChain) {
    if (std::find(variants.begin(), variants.end(), v) != variants.end()) out.push_back(v);
  }
  return out;
}

void write_bundle(const FitBundle& bundle, const HaulDataset& data, const NestingTree& tree,
                  const RunConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir / "archives");
  fs::create_directories(dir / "transforms");
  std::ofstream out;

  json summary;
  summary["seed"] = cfg.sampler.seed;
  summary["iterations"] = cfg.sampler.iterations;
  summary["warmup"] = cfg.sampler.warmup;
  summary["chains"] = cfg.sampler.chains;
  json fits = json::array();
  std::vector<BandRow> bands;
  for (const auto& f : bundle.fits) {
    json jf;
    jf["branch"] = f.branch;
    jf["variant"] = std::string(variant_name(f.variant));
    jf["warm_start"] = f.warm_started;
    if (f.status != FitStatus::Ok) {
      jf["status"] = f.status == FitStatus::SamplerFailure ? "sampler_failure" : "validation_failure";
      jf["error"] = f.error;
      fits.push_back(jf);
      continue;
    }
    jf["status"] = "ok";
    jf["waic"] = f.waic.waic;
    jf["lpd_hat"] = f.waic.lpd_hat;
    jf["p_waic"] = f.waic.p_waic;
    const double mr = f.archive.max_rhat();
    jf["max_rhat"] = std::isfinite(mr) ? json(mr) : json(nullptr);
    jf["converged"] = f.archive.converged(1.1);
    jf["divergences"] = f.archive.total_divergences();
    fits.push_back(jf);

    write_archive_file(archive_path(cfg.output_dir, f.branch, f.variant), f.archive);
    const auto b = fitted_bands(f, data.category_names());
    bands.insert(bands.end(), b.begin(), b.end());
    if (f.model && f.model->has_wavelet()) {
      for (std::size_t c = 0; c < f.model->num_components(); ++c) {
        std::string name = slug(f.branch);
        if (f.model->num_components() > 1) name += "_" + slug(data.category_names()[c]);
        open_out(out, dir / "transforms" / (name + "__" + slug(std::string(variant_name(f.variant))) + ".csv"));
        write_transform_csv(out, fit_transform(f, c, cfg.transform_draws));
        out.close();
      }
    }
  }
  summary["fits"] = fits;

  open_out(out, dir / "waic_table.csv");
  write_waic_table(out, bundle.table);
  out.close();
  open_out(out, dir / "fitted_bands.csv");
  write_bands_csv(out, bands);
  out.close();
  const auto emp = empirical_proportions(data, tree, cfg.jitter_seed);
  open_out(out, dir / "empirical_proportions.csv");
  write_empirical_csv(out, emp);
  out.close();
  open_out(out, dir / "smoother.csv");
  write_smoother_csv(out, smooth_proportions(emp, data.num_quarters(), cfg.smoother_bandwidth));
  out.close();
  open_out(out, dir / "nesting.json");
  out << tree.to_json() << '\n';
  out.close();
  open_out(out, dir / "summary.json");
  out << summary.dump(2) << '\n';
}

}  // namespace

FitBundle fit_all(const HaulDataset& data, const NestingTree& tree, const RunConfig& cfg) {
  if (cfg.variants.empty()) throw ValidationError("no model variants requested");
  if (data.num_categories() != tree.num_categories()) {
    throw ValidationError("dataset has " + std::to_string(data.num_categories()) +
                          " categories but the nesting tree has " + std::to_string(tree.num_categories()));
  }
  cfg.sampler.validate();
  const ModelDesign design = design_for(data.num_quarters(), cfg.levels);
  const std::vector<Variant> nested = nested_in_chain_order(cfg.variants);
  const bool multinomial =
      std::find(cfg.variants.begin(), cfg.variants.end(), Variant::Multinomial) != cfg.variants.end();
  const std::size_t n_nodes = tree.nodes().size();

  std::vector<std::vector<BranchFit>> per_branch(n_nodes);
  auto branch_task = [&](std::size_t node, bool warm) {
    const BranchFit* prev = nullptr;
    for (Variant v : nested) {
      per_branch[node].push_back(run_one(data, tree, node, v, design, cfg, warm ? prev : nullptr));
      prev = &per_branch[node].back();
    }
  };
  for (auto& v : per_branch) v.reserve(nested.size());
  if (cfg.parallel_branches && n_nodes > 1) {
    std::vector<std::thread> threads;
    for (std::size_t n = 0; n < n_nodes; ++n) threads.emplace_back(branch_task, n, false);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t n = 0; n < n_nodes; ++n) branch_task(n, cfg.warm_start);
  }

  FitBundle bundle;
  for (auto& v : per_branch) {
    for (auto& f : v) bundle.fits.push_back(std::move(f));
  }
  if (multinomial) bundle.fits.push_back(run_one(data, tree, 0, Variant::Multinomial, design, cfg, nullptr));

  std::vector<Variant> columns = nested;
  if (multinomial) columns.push_back(Variant::Multinomial);
  bundle.table = build_waic_table(bundle.fits, tree, columns);
  if (!cfg.output_dir.empty()) write_bundle(bundle, data, tree, cfg);
  return bundle;
}

// ---------------------------------------------------------------------------

std::vector<BandRow> fitted_bands(const BranchFit& fit, const std::vector<std::string>& category_names) {
  std::vector<BandRow> rows;
  if (fit.status != FitStatus::Ok || !fit.model) return rows;
  const BranchPosterior& m = *fit.model;
  const std::size_t n_t = m.interpolation().rows();
  const std::size_t n_draws = fit.archive.total_draws();
  const std::string vname(variant_name(fit.variant));

  if (m.variant() != Variant::Multinomial) {
    std::vector<std::vector<double>> cols(n_t, std::vector<double>(n_draws));
    for (std::size_t d = 0; d < n_draws; ++d) {
      const Eigen::VectorXd mu = m.mu(fit.archive.draw(d));
      for (std::size_t t = 0; t < n_t; ++t) cols[t][d] = inv_logit(mu[static_cast<Eigen::Index>(t)]);
    }
    for (std::size_t t = 0; t < n_t; ++t) {
      rows.push_back({fit.branch, vname, static_cast<int>(t + 1), quantile(cols[t], 0.5),
                      quantile(cols[t], 0.025), quantile(cols[t], 0.975)});
    }
    return rows;
  }

  const std::size_t k = m.num_components() + 1;
  std::vector<std::vector<std::vector<double>>> cols(k, std::vector<std::vector<double>>(n_t, std::vector<double>(n_draws)));
  std::vector<Eigen::VectorXd> mu(m.num_components());
  std::vector<double> eta(m.num_components());
  for (std::size_t d = 0; d < n_draws; ++d) {
    for (std::size_t c = 0; c < mu.size(); ++c) mu[c] = m.mu(fit.archive.draw(d), c);
    for (std::size_t t = 0; t < n_t; ++t) {
      for (std::size_t c = 0; c < mu.size(); ++c) eta[c] = mu[c][static_cast<Eigen::Index>(t)];
      const auto p = multilogit(eta);
      for (std::size_t j = 0; j < k; ++j) cols[j][t][d] = p[j];
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    const std::string name = j < category_names.size() ? category_names[j] : "category" + std::to_string(j + 1);
    for (std::size_t t = 0; t < n_t; ++t) {
      rows.push_back({name, vname, static_cast<int>(t + 1), quantile(cols[j][t], 0.5),
                      quantile(cols[j][t], 0.025), quantile(cols[j][t], 0.975)});
    }
  }
  return rows;
}

void write_bands_csv(std::ostream& out, const std::vector<BandRow>& rows) {
  out << "branch,variant,quarter,median,lo95,hi95\n";
  for (const auto& r : rows) {
    out << csv_field(r.branch) << ',' << r.variant << ',' << r.quarter << ',' << fmt_double(r.median) << ','
        << fmt_double(r.lo95) << ',' << fmt_double(r.hi95) << '\n';
  }
}

std::vector<BandRow> read_bands_csv(std::istream& in) {
  std::vector<BandRow> out;
  std::size_t line = 1;
  for (const auto& f : read_rows(in, "branch,variant,quarter,median,lo95,hi95", 6, "bands CSV")) {
    ++line;
    out.push_back({f[0], f[1], static_cast<int>(to_long(f[2], "bands CSV", line)),
                   to_double(f[3], "bands CSV", line), to_double(f[4], "bands CSV", line),
                   to_double(f[5], "bands CSV", line)});
  }
  return out;
}

WaveletTransformSummary fit_transform(const BranchFit& fit, std::size_t component, int individual_draws) {
  if (fit.status != FitStatus::Ok || !fit.model) throw ValidationError("fit has no draws");
  if (!fit.model->has_wavelet()) throw ValidationError("constant-mean model has no wavelet transform");
  std::vector<Eigen::VectorXd> mu;
  mu.reserve(fit.archive.total_draws());
  for (std::size_t d = 0; d < fit.archive.total_draws(); ++d) {
    mu.push_back(fit.model->mu(fit.archive.draw(d), component));
  }
  return transform_summary(mu, fit.model->basis(), fit.model->interpolation(), individual_draws);
}

std::vector<EmpiricalRow> empirical_proportions(const HaulDataset& data, const NestingTree& tree,
                                                std::uint64_t jitter_seed) {
  std::vector<EmpiricalRow> rows;
  for (std::size_t n = 0; n < tree.nodes().size(); ++n) {
    const BranchDataset bd = aggregate_branch(data, tree.nodes()[n]);
    Rng rng = make_rng(jitter_seed, n);
    std::uniform_real_distribution<double> jitter(-0.25, 0.25);
    for (std::size_t i = 0; i < bd.pairs.size(); ++i) {
      const BranchPair& p = bd.pairs[i];
      if (!p.active()) continue;
      rows.push_back({bd.node_label, i, p.quarter,
                      static_cast<double>(p.successes) / static_cast<double>(p.trials), jitter(rng)});
    }
  }
  return rows;
}

std::vector<SmootherRow> smooth_proportions(const std::vector<EmpiricalRow>& rows, int num_quarters,
                                            double bandwidth) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_branch;
  for (const auto& r : rows) {
    if (!by_branch.count(r.branch)) order.push_back(r.branch);
    by_branch[r.branch].first.push_back(r.quarter);
    by_branch[r.branch].second.push_back(r.proportion);
  }
  std::vector<double> grid(static_cast<std::size_t>(num_quarters));
  for (int t = 0; t < num_quarters; ++t) grid[static_cast<std::size_t>(t)] = t + 1.0;
  std::vector<SmootherRow> out;
  for (const auto& b : order) {
    const auto& [x, y] = by_branch[b];
    const auto s = kernel_smooth(x, y, grid, bandwidth);
    for (int t = 0; t < num_quarters; ++t) out.push_back({b, t + 1, s[static_cast<std::size_t>(t)]});
  }
  return out;
}

void write_empirical_csv(std::ostream& out, const std::vector<EmpiricalRow>& rows) {
  out << "branch,record_id,quarter,proportion,jitter\n";
  for (const auto& r : rows) {
    out << csv_field(r.branch) << ',' << r.record_id << ',' << r.quarter << ',' << fmt_double(r.proportion)
        << ',' << fmt_double(r.jitter) << '\n';
  }
}

std::vector<EmpiricalRow> read_empirical_csv(std::istream& in) {
  std::vector<EmpiricalRow> out;
  std::size_t line = 1;
  for (const auto& f : read_rows(in, "branch,record_id,quarter,proportion,jitter", 5, "empirical CSV")) {
    ++line;
    out.push_back({f[0], static_cast<std::size_t>(to_long(f[1], "empirical CSV", line)),
                   static_cast<int>(to_long(f[2], "empirical CSV", line)),
                   to_double(f[3], "empirical CSV", line), to_double(f[4], "empirical CSV", line)});
  }
  return out;
}

void write_smoother_csv(std::ostream& out, const std::vector<SmootherRow>& rows) {
  out << "branch,quarter,smoothed\n";
  for (const auto& r : rows) {
    out << csv_field(r.branch) << ',' << r.quarter << ',' << fmt_double(r.smoothed) << '\n';
  }
}

std::vector<SmootherRow> read_smoother_csv(std::istream& in) {
  std::vector<SmootherRow> out;
  std::size_t line = 1;
  for (const auto& f : read_rows(in, "branch,quarter,smoothed", 3, "smoother CSV")) {
    ++line;
    out.push_back({f[0], static_cast<int>(to_long(f[1], "smoother CSV", line)),
                   to_double(f[2], "smoother CSV", line)});
  }
  return out;
}

// ---------------------------------------------------------------------------

HoldoutRun run_holdout(const HaulDataset& data, const NestingTree& tree, const RunConfig& config,
                       double fraction, std::uint64_t seed) {
  HoldoutRun run;
  run.split = make_holdout(data, fraction, seed);
  RunConfig train_cfg = config;
  train_cfg.output_dir.clear();
  run.bundle = fit_all(data.subset(run.split.train), tree, train_cfg);

  std::vector<BranchDataset> full;
  for (const auto& n : tree.nodes()) full.push_back(aggregate_branch(data, n));
  auto targets_for = [&](std::size_t node) {
    std::vector<PredictionTarget> out;
    for (std::size_t id : run.split.test) {
      const BranchPair& p = full[node].pairs[id];
      out.push_back({id, p.quarter, p.trials, p.successes});
    }
    return out;
  };

  std::uint64_t k = 0;
  for (const auto& f : run.bundle.fits) {
    ++k;
    if (f.status != FitStatus::Ok) continue;
    if (f.variant == Variant::Multinomial) {
      for (std::size_t n = 0; n < tree.nodes().size(); ++n) {
        const auto targets = targets_for(n);
        run.results.push_back({tree.nodes()[n].label, f.variant,
                               predict_holdout(*f.model, f.archive, targets, seed + 31 * k + n,
                                               &tree.nodes()[n])});
      }
    } else {
      const auto targets = targets_for(f.node_index);
      run.results.push_back({f.branch, f.variant, predict_holdout(*f.model, f.archive, targets, seed + 31 * k)});
    }
  }

  if (!config.output_dir.empty()) {
    const fs::path dir = fs::path(config.output_dir) / "holdout";
    fs::create_directories(dir);
    std::ofstream out;
    open_out(out, dir / "split.csv");
    out << "record_id,set\n";
    for (std::size_t id : run.split.train) out << id << ",train\n";
    for (std::size_t id : run.split.test) out << id << ",test\n";
    out.close();
    json cov = json::array();
    for (const auto& r : run.results) {
      const std::string v(variant_name(r.variant));
      open_out(out, dir / (slug(r.branch) + "__" + slug(v) + ".csv"));
      write_predictions_csv(out, r.predictions);
      out.close();
      cov.push_back({{"branch", r.branch}, {"variant", v}, {"coverage95", coverage(r.predictions)},
                     {"test_records", r.predictions.size()}});
    }
    open_out(out, dir / "coverage.json");
    out << cov.dump(2) << '\n';
    out.close();
    open_out(out, dir / "waic_table_train.csv");
    write_waic_table(out, run.bundle.table);
  }
  return run;
}

WaicTable waic_from_archives(const std::string& output_dir, const NestingTree& tree) {
  const fs::path dir = fs::path(output_dir) / "archives";
  if (!fs::is_directory(dir)) throw ValidationError("no archives directory under " + output_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".nwa") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<BranchFit> fits;
  std::vector<Variant> present;
  for (const auto& p : files) {
    BranchFit f;
    f.archive = read_archive_file(p.string());
    const auto branch = f.archive.meta.find("branch");
    const auto variant = f.archive.meta.find("variant");
    if (branch == f.archive.meta.end() || variant == f.archive.meta.end()) {
      throw ValidationError("archive " + p.string() + " lacks branch/variant metadata");
    }
    f.branch = branch->second;
    f.variant = parse_variant(variant->second);
    f.waic = waic(f.archive);
    f.archive = SampleArchive{};
    if (std::find(present.begin(), present.end(), f.variant) == present.end()) present.push_back(f.variant);
    fits.push_back(std::move(f));
  }
  std::vector<Variant> columns = nested_in_chain_order(present);
  if (std::find(present.begin(), present.end(), Variant::Multinomial) != present.end()) {
    columns.push_back(Variant::Multinomial);
  }
  return build_waic_table(fits, tree, columns);
}

std::string slug(const std::string& label) {
  std::string out;
  bool sep = false;
  for (unsigned char c : label) {
    if (std::isalnum(c)) {
      if (sep && !out.empty()) out += '_';
      out += static_cast<char>(std::tolower(c));
      sep = false;
    } else {
      sep = true;
    }
  }
  return out.empty() ? "branch" : out;
}

std::string archive_path(const std::string& output_dir, const std::string& branch, Variant v) {
  return (fs::path(output_dir) / "archives" /
          (slug(branch) + "__" + slug(std::string(variant_name(v))) + ".nwa"))
      .string();
}

}  // namespace nestwave
