#include "svre/errors.hpp"
#include "svre/evalharness.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace svre {

namespace {

using nlohmann::json;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

// One-line provenance header carried by every CSV.
std::string config_line(const std::string& config) {
  std::string flat = config;
  for (char& c : flat) {
    if (c == '\n') c = ' ';
  }
  return "# config=" + flat + "\n";
}

json to_json(const ResultRow& r) {
  return {{"experiment", r.experiment}, {"attack", r.attack},   {"target", r.target},
          {"role", r.role},             {"ensemble", r.ensemble}, {"seed", r.seed},
          {"param", r.param},           {"param_value", r.param_value}, {"success_rate", r.success_rate},
          {"attacked", r.attacked},     {"queries", r.queries}, {"loss_curve", r.loss_curve}};
}

ResultRow row_from_json(const json& j) {
  ResultRow r;
  r.experiment = j.at("experiment").get<std::string>();
  r.attack = j.at("attack").get<std::string>();
  r.target = j.at("target").get<std::string>();
  r.role = j.at("role").get<std::string>();
  r.ensemble = j.at("ensemble").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.param = j.at("param").get<std::string>();
  r.param_value = j.at("param_value").get<double>();
  r.success_rate = j.at("success_rate").get<double>();
  r.attacked = j.at("attacked").get<std::size_t>();
  r.queries = j.at("queries").get<std::uint64_t>();
  r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
  return r;
}

std::string summary_csv(const std::vector<Summary>& summaries, const std::string& experiment_filter) {
  std::ostringstream out;
  out << "experiment,attack,target,role,ensemble,param,param_value,mean_success,std_success,seeds\n";
  for (const Summary& s : summaries) {
    if (!experiment_filter.empty() && s.experiment != experiment_filter) continue;
    out << field(s.experiment) << ',' << field(s.attack) << ',' << field(s.target) << ',' << field(s.role) << ','
        << field(s.ensemble) << ',' << field(s.param) << ',' << num(s.param_value) << ',' << num(s.mean) << ','
        << num(s.stddev) << ',' << s.seeds << '\n';
  }
  return out.str();
}

const char* kReadme = R"(Result files
============

Every CSV starts with one line "# config=<json>" holding the resolved run
configuration (including seeds); the header row follows it.

results.csv        one row per (experiment, attack, target, seed[, parameter]) cell
  experiment       holdout | sweep-M | sweep-beta | query-matched
  attack           attack label
  target           scored model, "<model>|<defense>" for defended evaluations
  role             hold-out | extra | defended | white-box
  ensemble         attacked ensemble, members joined with '+'
  seed             attack seed
  param            swept parameter (M, beta, T) or empty
  param_value      value of the swept parameter (beta in [0,1] pixel units)
  success_rate     misclassified / attacked
  attacked         number of attacked images
  queries          single-model gradient evaluations spent on the whole batch

summary.csv        results.csv averaged over seeds
  mean_success     mean success rate over seeds
  std_success      sample standard deviation over seeds (0 for one seed)
  seeds            number of seeds

loss_curves.csv    mean target cross-entropy per outer iteration
  experiment, attack, role as above (averaged over targets, hold-outs and seeds)
  iteration        0 is the clean image
  mean_loss        mean cross-entropy

sweep_M.csv, sweep_beta.csv, query_matched.csv
                   summary.csv restricted to one experiment

cosine_matrix.csv  mean cosine similarity of sign gradients
  model_i, model_j model names
  cosine           mean over images (all-zero sign gradients count as 0)

results.json       the full table, loss curves, cosine matrix and config
)";

}  // namespace

std::string results_csv(const ResultTable& table) {
  std::ostringstream out;
  out << "experiment,attack,target,role,ensemble,seed,param,param_value,success_rate,attacked,queries\n";
  for (const ResultRow& r : table.rows) {
    out << field(r.experiment) << ',' << field(r.attack) << ',' << field(r.target) << ',' << field(r.role) << ','
        << field(r.ensemble) << ',' << r.seed << ',' << field(r.param) << ',' << num(r.param_value) << ','
        << num(r.success_rate) << ',' << r.attacked << ',' << r.queries << '\n';
  }
  return out.str();
}

void write_report(const ReportBundle& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::string head = config_line(report.config.empty() ? "{}" : report.config);
  const std::vector<Summary> summaries = summarize(report.table);

  write_text(dir / "results.csv", head + results_csv(report.table));
  write_text(dir / "summary.csv", head + summary_csv(summaries, ""));
  write_text(dir / "sweep_M.csv", head + summary_csv(summaries, "sweep-M"));
  write_text(dir / "sweep_beta.csv", head + summary_csv(summaries, "sweep-beta"));
  write_text(dir / "query_matched.csv", head + summary_csv(summaries, "query-matched"));

  std::ostringstream curves;
  curves << "experiment,attack,role,iteration,mean_loss\n";
  for (const LossCurve& c : loss_curves(report.table)) {
    for (std::size_t t = 0; t < c.mean.size(); ++t) {
      curves << field(c.experiment) << ',' << field(c.attack) << ',' << field(c.role) << ',' << t << ','
             << num(c.mean[t]) << '\n';
    }
  }
  write_text(dir / "loss_curves.csv", head + curves.str());

  std::ostringstream cos;
  cos << "model_i,model_j,cosine\n";
  if (report.cosine) {
    const CosineMatrix& m = *report.cosine;
    for (std::size_t i = 0; i < m.models.size(); ++i) {
      for (std::size_t j = 0; j < m.models.size(); ++j) {
        cos << field(m.models[i]) << ',' << field(m.models[j]) << ',' << num(m.mean[i][j]) << '\n';
      }
    }
  }
  write_text(dir / "cosine_matrix.csv", head + cos.str());

  json j;
  j["config"] = report.config.empty() ? json::object() : json::parse(report.config, nullptr, false);
  if (j["config"].is_discarded()) j["config"] = report.config;
  j["rows"] = json::array();
  for (const ResultRow& r : report.table.rows) j["rows"].push_back(to_json(r));
  j["loss_curves"] = json::array();
  for (const LossCurve& c : loss_curves(report.table)) {
    j["loss_curves"].push_back({{"experiment", c.experiment}, {"attack", c.attack}, {"role", c.role}, {"mean", c.mean}});
  }
  if (report.cosine) {
    j["cosine"] = {{"models", report.cosine->models},
                   {"mean", report.cosine->mean},
                   {"zero_cases", report.cosine->zero_cases},
                   {"images", report.cosine->images}};
  }
  write_text(dir / "results.json", j.dump(1) + "\n");
  write_text(dir / "README.txt", kReadme);
}

ReportBundle load_report_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
    ReportBundle out;
    const json& config = j.at("config");
    out.config = config.is_string() ? config.get<std::string>() : (config.empty() ? "" : config.dump());
    for (const json& r : j.at("rows")) out.table.rows.push_back(row_from_json(r));
    if (j.contains("cosine")) {
      CosineMatrix m;
      m.models = j["cosine"].at("models").get<std::vector<std::string>>();
      m.mean = j["cosine"].at("mean").get<std::vector<std::vector<double>>>();
      m.zero_cases = j["cosine"].at("zero_cases").get<std::size_t>();
      m.images = j["cosine"].at("images").get<std::size_t>();
      out.cosine = std::move(m);
    }
    return out;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace svre
