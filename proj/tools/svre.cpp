// svre: data generation, training, attacks and evaluation from the command line.
//
// Options may also come from a config file (--config FILE) in key = value form, with
// one [section] per subcommand:
//
//   [attack]
//   method = svre
//   eps = 0.0627
//
// Flags override the file, which overrides the built-in defaults.

#include "svre/attacks.hpp"
#include "svre/dataset.hpp"
#include "svre/errors.hpp"
#include "svre/evalharness.hpp"
#include "svre/zoo.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <thread>

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kUsage = 2, kIo = 3, kFormat = 4, kRuntime = 5, kUnexpected = 6 };

[[noreturn]] void fail(int code, const std::string& name, const std::string& message) {
  std::string flat = message;
  for (char& c : flat) {
    if (c == '\n') c = ' ';
  }
  std::cerr << "error: code=" << name << " message=" << flat << "\n";
  std::exit(code);
}

// Every option of a subcommand with its resolved value. Output locations are left out so
// that identical runs into different directories produce identical files.
json resolved_config(const CLI::App& sub) {
  json out = json::object();
  out["command"] = sub.get_name();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "out" || name == "adv-out") continue;
    if (opt->count() > 0) {
      const std::vector<std::string>& r = opt->results();
      out[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else if (!opt->get_default_str().empty()) {
      out[name] = opt->get_default_str();
    }
  }
  return out;
}

fs::path train_path(const fs::path& dir) { return dir / "train.svd"; }
fs::path test_path(const fs::path& dir) { return dir / "test.svd"; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw svre::IoError("cannot write '" + path.string() + "'");
}

svre::NamedModel load_named(const fs::path& path) {
  return {path.stem().string(), std::make_shared<const svre::Model>(svre::load_model(path))};
}

// --- gen-data -------------------------------------------------------------------

struct GenData {
  std::uint64_t seed = 0;
  svre::Index train_n = 5000;
  svre::Index test_n = 1000;
  std::string out;
};

void run_gen_data(const GenData& o, const json& config) {
  svre::DatasetManifest m;
  m.seed = o.seed;
  m.train_count = o.train_n;
  m.test_count = o.test_n;
  const svre::Dataset ds = svre::generate(m);
  fs::create_directories(o.out);
  svre::save_images(ds.train, train_path(o.out), config.dump());
  svre::save_images(ds.test, test_path(o.out), config.dump());
}

// --- train ----------------------------------------------------------------------

struct Train {
  std::string arch;
  std::string data;
  std::string out;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<double> momentum;
  svre::Index batch = 32;
  std::uint64_t seed = 0;
  bool adversarial = false;
  double eps = 16.0 / 255.0;
  int pgd_steps = 5;
};

void run_train(const Train& o, const json& config) {
  const svre::ModelSpec spec = svre::builtin_spec(o.arch);
  const auto train = svre::load_images(train_path(o.data));
  const auto test = svre::load_images(test_path(o.data));
  svre::TrainOptions t = svre::default_train_options(o.arch);
  if (o.epochs) t.epochs = *o.epochs;
  if (o.lr) t.learning_rate = *o.lr;
  if (o.momentum) t.momentum = *o.momentum;
  t.batch_size = o.batch;
  t.seed = o.seed;
  svre::Weights w = o.adversarial
                              ? svre::train_adversarial(spec, train, test, t, {o.eps, o.pgd_steps})
                              : svre::train(spec, train, test, t);
  w.info.provenance = config.dump();
  svre::save_weights(spec, w, o.out);
  std::cout << json{{"arch", spec.name}, {"test_accuracy", w.info.test_accuracy}, {"out", o.out}}.dump() << "\n";
}

// --- attack options shared by attack and evaluate -------------------------------

struct AttackFlags {
  std::string method = "svre";
  std::string base = "mifgsm";
  double eps = 16.0 / 255.0;
  int T = 10;
  std::optional<double> alpha;
  std::optional<int> M;
  std::optional<double> beta;
  std::optional<double> mu1;
  double mu2 = 1.0;
  std::string fusion = "logits";
  bool no_inverse_k = false;
  bool normalize_momentum = false;
  std::optional<std::uint64_t> max_queries;
  std::uint64_t seed = 0;
  // Transform overrides; setting one adds its component to the base's stack.
  std::optional<double> di_p;
  std::optional<svre::Index> di_min_resize;
  std::optional<svre::Index> ti_size;
  std::optional<double> ti_nsig;
  std::optional<int> si_m;
  std::optional<int> admix_m1;
  std::optional<int> admix_m2;
  std::optional<double> admix_eta;
};

void add_attack_flags(CLI::App* sub, AttackFlags& f) {
  sub->add_option("--method", f.method, "ens | svre")->capture_default_str();
  sub->add_option("--base", f.base, "ifgsm | mifgsm | tim | tidim | sitidim | admix-tidim")->capture_default_str();
  sub->add_option("--eps", f.eps, "L-inf budget in [0,1] pixel units")->capture_default_str();
  sub->add_option("--T", f.T, "outer iterations")->capture_default_str();
  sub->add_option("--alpha", f.alpha, "outer step (default eps/T)");
  sub->add_option("--M", f.M, "inner iterations (default 4K)");
  sub->add_option("--beta", f.beta, "inner step (default alpha)");
  sub->add_option("--mu1", f.mu1, "outer decay (default 1, 0 for ifgsm)");
  sub->add_option("--mu2", f.mu2, "inner decay")->capture_default_str();
  sub->add_option("--fusion", f.fusion, "predictions | logits | losses")->capture_default_str();
  sub->add_flag("--no-inner-scale", f.no_inverse_k, "do not scale the ensemble gradient by 1/K");
  sub->add_flag("--normalize-momentum", f.normalize_momentum, "divide gradients by their L1 norm before accumulation");
  sub->add_option("--max-queries", f.max_queries, "per-image gradient query budget");
  sub->add_option("--seed", f.seed, "attack seed")->capture_default_str();
  sub->add_option("--di.p", f.di_p, "resize-pad probability");
  sub->add_option("--di.min_resize", f.di_min_resize, "smallest resized side");
  sub->add_option("--ti.size", f.ti_size, "Gaussian kernel side (odd)");
  sub->add_option("--ti.nsig", f.ti_nsig, "kernel half-width in standard deviations");
  sub->add_option("--si.m", f.si_m, "scale copies");
  sub->add_option("--admix.m1", f.admix_m1, "admix scale copies");
  sub->add_option("--admix.m2", f.admix_m2, "admix add-in images");
  sub->add_option("--admix.eta", f.admix_eta, "admix mixing strength");
}

svre::AttackConfig make_config(const AttackFlags& f, int k,
                               std::shared_ptr<const std::vector<svre::LabeledImage>> pool) {
  svre::AttackConfig c = svre::default_config(svre::parse_base(f.base), k, pool);
  c.epsilon = f.eps;
  c.iterations = f.T;
  c.step = f.alpha;
  if (f.M) c.inner_iterations = *f.M;
  c.inner_step = f.beta;
  if (f.mu1) c.decay = *f.mu1;
  c.inner_decay = f.mu2;
  c.fusion = svre::parse_fusion(f.fusion);
  c.include_inverse_k = !f.no_inverse_k;
  c.normalize_momentum = f.normalize_momentum;
  c.max_queries = f.max_queries;
  c.seed = f.seed;
  svre::TransformStack& ts = c.transforms;
  if (f.di_p || f.di_min_resize) {
    if (!ts.diversity) ts.diversity = svre::DiversityInput{};
    if (f.di_p) ts.diversity->probability = *f.di_p;
    if (f.di_min_resize) ts.diversity->min_resize = *f.di_min_resize;
  }
  if (f.ti_size || f.ti_nsig) {
    if (!ts.translation) ts.translation = svre::TranslationInvariance{};
    if (f.ti_size) ts.translation->kernel_size = *f.ti_size;
    if (f.ti_nsig) ts.translation->nsig = *f.ti_nsig;
  }
  if (f.si_m) {
    if (!ts.scale) ts.scale = svre::ScaleInvariance{};
    ts.scale->copies = *f.si_m;
  }
  if (f.admix_m1 || f.admix_m2 || f.admix_eta) {
    if (!ts.admix) ts.admix = svre::Admix{5, 3, 0.2, pool};
    if (f.admix_m1) ts.admix->scale_copies = *f.admix_m1;
    if (f.admix_m2) ts.admix->mixed_images = *f.admix_m2;
    if (f.admix_eta) ts.admix->eta = *f.admix_eta;
  }
  svre::validate(c);
  return c;
}

// --- attack ---------------------------------------------------------------------

struct Attack {
  AttackFlags flags;
  std::vector<std::string> models;
  std::vector<std::string> holdout;
  std::string data;
  std::size_t images = 256;
  std::string out;
  std::string adv_out;
  std::optional<int> defense_bits;
  std::optional<int> defense_window;
};

void run_attack_cmd(const Attack& o, const json& config, int workers) {
  std::vector<svre::NamedModel> members;
  for (const auto& p : o.models) members.push_back(load_named(p));
  std::vector<svre::NamedModel> holdouts;
  for (const auto& p : o.holdout) holdouts.push_back(load_named(p));

  const auto test = svre::load_images(test_path(o.data));
  std::vector<svre::NamedModel> all = members;
  all.insert(all.end(), holdouts.begin(), holdouts.end());
  const std::vector<svre::LabeledImage> images = svre::select_images(all, test, o.images);
  if (images.empty()) throw svre::InvalidArgument("no test image is classified correctly by every model");

  auto pool = std::make_shared<const std::vector<svre::LabeledImage>>(
      fs::exists(train_path(o.data)) ? svre::load_images(train_path(o.data)) : test);
  const svre::AttackConfig cfg = make_config(o.flags, static_cast<int>(members.size()), pool);
  std::vector<std::shared_ptr<const svre::Model>> models;
  for (const auto& m : members) models.push_back(m.model);
  const svre::AttackReport report =
      svre::run_attack(svre::parse_method(o.flags.method), models, images, cfg, workers);

  std::vector<int> labels;
  for (const auto& im : images) labels.push_back(im.label);
  json success = json::object();
  for (const auto& m : members) success["white-box"][m.name] = svre::success_rate(m.model, report.adversarials, labels);
  for (const auto& m : holdouts) success["hold-out"][m.name] = svre::success_rate(m.model, report.adversarials, labels);
  std::vector<svre::Defense> defenses;
  if (o.defense_bits) defenses.push_back({svre::Defense::Kind::bit_reduction, *o.defense_bits});
  if (o.defense_window) defenses.push_back({svre::Defense::Kind::spatial_smoothing, *o.defense_window});
  for (const auto& d : defenses) {
    for (const auto& m : holdouts) {
      success["defended"][svre::defense_name(d)][m.name] = svre::success_rate(m.model, report.adversarials, labels, d);
    }
  }

  json per_image = json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    per_image.push_back({{"index", i}, {"label", labels[i]}, {"queries", report.queries[i]}, {"losses", report.losses[i]}});
  }
  const json doc{{"config", config},
                 {"method", svre::method_name(report.method)},
                 {"seed", cfg.seed},
                 {"ensemble_size", models.size()},
                 {"inner_iterations", cfg.inner_iterations},
                 {"total_queries", report.total_queries},
                 {"success", success},
                 {"images", per_image}};
  write_text(o.out, doc.dump(1) + "\n");

  if (!o.adv_out.empty()) {
    std::vector<svre::LabeledImage> adv;
    for (std::size_t i = 0; i < images.size(); ++i) adv.push_back({report.adversarials[i], labels[i]});
    svre::save_images(adv, o.adv_out, config.dump());
  }
}

// --- evaluate / ablate ----------------------------------------------------------

// Plan file (JSON):
// {
//   "data": "dir",                       dataset directory from gen-data
//   "members": ["a.w", ...],             rotated through the hold-out position
//   "extra_targets": ["adv.w", ...],     optional black-box-only targets
//   "attacks": [{"label": "svre-mi", "method": "svre", "base": "mifgsm",
//                optional "eps", "T", "alpha", "M", "beta", "mu1", "mu2", "fusion",
//                "normalize_momentum", "include_inverse_k", "di.p", "di.min_resize",
//                "ti.size", "ti.nsig", "si.m", "admix.m1", "admix.m2", "admix.eta"}],
//   "seeds": [0, 1, 2, 3, 4],
//   "image_count": 256,
//   "experiments": ["holdout", "sweep-M", "sweep-beta", "query-matched", "cosine"],
//   "sweep_holdouts": ["ConvA"],        model names (file stems); empty = all
//   "m_grid": [0, 4, ...],              "beta_grid": [...] in [0,1] pixel units
//   "defenses": [{"kind": "bits", "parameter": 4}, {"kind": "median", "parameter": 3}]
// }
struct LoadedPlan {
  svre::ExperimentPlan plan;
  std::vector<svre::LabeledImage> images;
  std::vector<std::string> experiments;
  json source;
};

template <typename T>
T plan_value(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

LoadedPlan load_plan(const fs::path& path, int workers) {
  std::ifstream in(path);
  if (!in) throw svre::IoError("cannot open plan '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw svre::FormatError("plan '" + path.string() + "': " + e.what());
  }
  try {
    LoadedPlan out;
    out.source = j;
    const fs::path base = path.parent_path();
    const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    const fs::path data = resolve(j.at("data").get<std::string>());
    for (const auto& p : j.at("members")) out.plan.members.push_back(load_named(resolve(p.get<std::string>())));
    for (const auto& p : plan_value<json>(j, "extra_targets", json::array())) {
      out.plan.extra_targets.push_back(load_named(resolve(p.get<std::string>())));
    }
    const int k = static_cast<int>(out.plan.members.size()) - 1;
    auto pool = std::make_shared<const std::vector<svre::LabeledImage>>(
        fs::exists(train_path(data)) ? svre::load_images(train_path(data)) : svre::load_images(test_path(data)));
    for (const auto& a : j.at("attacks")) {
      AttackFlags f;
      f.method = a.at("method").get<std::string>();
      f.base = plan_value<std::string>(a, "base", f.base);
      f.eps = plan_value(a, "eps", f.eps);
      f.T = plan_value(a, "T", f.T);
      if (a.contains("alpha")) f.alpha = a["alpha"].get<double>();
      if (a.contains("M")) f.M = a["M"].get<int>();
      if (a.contains("beta")) f.beta = a["beta"].get<double>();
      if (a.contains("mu1")) f.mu1 = a["mu1"].get<double>();
      f.mu2 = plan_value(a, "mu2", f.mu2);
      f.fusion = plan_value<std::string>(a, "fusion", f.fusion);
      f.normalize_momentum = plan_value(a, "normalize_momentum", false);
      f.no_inverse_k = !plan_value(a, "include_inverse_k", true);
      if (a.contains("di.p")) f.di_p = a["di.p"].get<double>();
      if (a.contains("di.min_resize")) f.di_min_resize = a["di.min_resize"].get<svre::Index>();
      if (a.contains("ti.size")) f.ti_size = a["ti.size"].get<svre::Index>();
      if (a.contains("ti.nsig")) f.ti_nsig = a["ti.nsig"].get<double>();
      if (a.contains("si.m")) f.si_m = a["si.m"].get<int>();
      if (a.contains("admix.m1")) f.admix_m1 = a["admix.m1"].get<int>();
      if (a.contains("admix.m2")) f.admix_m2 = a["admix.m2"].get<int>();
      if (a.contains("admix.eta")) f.admix_eta = a["admix.eta"].get<double>();
      const std::string label = plan_value<std::string>(a, "label", f.method + "-" + f.base);
      out.plan.attacks.push_back({label, svre::parse_method(f.method), make_config(f, k, pool)});
    }
    out.plan.seeds = plan_value<std::vector<std::uint64_t>>(j, "seeds", out.plan.seeds);
    out.plan.image_count = plan_value<std::size_t>(j, "image_count", out.plan.image_count);
    out.plan.sweep_holdouts = plan_value<std::vector<std::string>>(j, "sweep_holdouts", {});
    out.plan.m_grid = plan_value<std::vector<int>>(j, "m_grid", out.plan.m_grid);
    out.plan.beta_grid = plan_value<std::vector<double>>(j, "beta_grid", {});
    for (const auto& d : plan_value<json>(j, "defenses", json::array())) {
      const std::string kind = d.at("kind").get<std::string>();
      if (kind != "bits" && kind != "median") throw svre::FormatError("unknown defense kind '" + kind + "'");
      out.plan.defenses.push_back({kind == "bits" ? svre::Defense::Kind::bit_reduction
                                                  : svre::Defense::Kind::spatial_smoothing,
                                   d.at("parameter").get<int>()});
    }
    out.plan.workers = workers;
    out.experiments = plan_value<std::vector<std::string>>(j, "experiments", {"holdout"});
    svre::validate(out.plan);
    out.images = svre::select_images(out.plan.members, svre::load_images(test_path(data)), out.plan.image_count);
    if (out.images.empty()) throw svre::InvalidArgument("no test image is classified correctly by every member");
    return out;
  } catch (const json::exception& e) {
    throw svre::FormatError("plan '" + path.string() + "': " + e.what());
  }
}

void append(svre::ResultTable& into, const svre::ResultTable& from) {
  into.rows.insert(into.rows.end(), from.rows.begin(), from.rows.end());
}

void run_experiments(const LoadedPlan& lp, const std::vector<std::string>& experiments, const json& config,
                     const std::string& out) {
  svre::ReportBundle bundle;
  json echo = config;
  echo["plan_contents"] = lp.source;
  echo["image_count_used"] = lp.images.size();
  bundle.config = echo.dump();
  for (const std::string& e : experiments) {
    if (e == "holdout") {
      append(bundle.table, svre::holdout_protocol(lp.plan, lp.images));
    } else if (e == "sweep-M") {
      append(bundle.table, svre::ablate_M(lp.plan, lp.images));
    } else if (e == "sweep-beta") {
      append(bundle.table, svre::ablate_beta(lp.plan, lp.images));
    } else if (e == "query-matched") {
      append(bundle.table, svre::query_matched(lp.plan, lp.images));
    } else if (e == "cosine") {
      bundle.cosine = svre::sign_gradient_cosine(lp.plan.members, lp.images, lp.plan.workers);
    } else {
      throw svre::InvalidArgument("unknown experiment '" + e + "'");
    }
  }
  svre::write_report(bundle, out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble adversarial attacks with stochastic variance reduction"};
  app.set_config("--config", "", "read options from a key = value file");
  // Dotted option names (si.m, di.p, ...) are plain keys, not nested sections.
  app.get_config_formatter_base()->parentSeparator('/');
  app.require_subcommand(1);
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--workers", workers, "worker threads (1 gives bit-reproducible runs)")->capture_default_str();

  GenData gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "render the synthetic dataset");
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--train-n", gen.train_n)->capture_default_str();
  gen_cmd->add_option("--test-n", gen.test_n)->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  Train tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train one builtin architecture");
  train_cmd->add_option("--arch", tr.arch, "ConvA | ConvB | ConvC | MlpD")->required();
  train_cmd->add_option("--data", tr.data, "dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "weights file")->required();
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--momentum", tr.momentum);
  train_cmd->add_option("--batch", tr.batch)->capture_default_str();
  train_cmd->add_option("--seed", tr.seed)->capture_default_str();
  train_cmd->add_flag("--adversarial", tr.adversarial, "PGD adversarial training");
  train_cmd->add_option("--eps", tr.eps)->capture_default_str();
  train_cmd->add_option("--pgd-steps", tr.pgd_steps)->capture_default_str();

  Attack at;
  CLI::App* attack_cmd = app.add_subcommand("attack", "attack an ensemble");
  add_attack_flags(attack_cmd, at.flags);
  attack_cmd->add_option("--models", at.models, "ensemble member weight files")->required();
  attack_cmd->add_option("--holdout", at.holdout, "black-box target weight files");
  attack_cmd->add_option("--data", at.data, "dataset directory")->required();
  attack_cmd->add_option("--images", at.images, "images to attack")->capture_default_str();
  attack_cmd->add_option("--out", at.out, "report JSON")->required();
  attack_cmd->add_option("--adv-out", at.adv_out, "adversarial images (dataset container)");
  attack_cmd->add_option("--defense.bits", at.defense_bits, "also score hold-outs behind bit-depth reduction");
  attack_cmd->add_option("--defense.window", at.defense_window, "also score hold-outs behind a median filter");

  std::string plan_path, eval_out;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "run the experiments of a plan");
  eval_cmd->add_option("--plan", plan_path, "plan JSON")->required();
  eval_cmd->add_option("--out", eval_out, "output directory")->required();

  std::string ablate_plan, ablate_out, sweep = "M";
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run one sweep of a plan");
  ablate_cmd->add_option("--plan", ablate_plan, "plan JSON")->required();
  ablate_cmd->add_option("--sweep", sweep, "M | beta | query")->capture_default_str();
  ablate_cmd->add_option("--out", ablate_out, "output directory")->required();

  std::vector<std::string> cos_models;
  std::string cos_data, cos_out;
  std::size_t cos_images = 256;
  CLI::App* cos_cmd = app.add_subcommand("cosine", "sign-gradient cosine similarity between models");
  cos_cmd->add_option("--models", cos_models)->required();
  cos_cmd->add_option("--data", cos_data)->required();
  cos_cmd->add_option("--images", cos_images)->capture_default_str();
  cos_cmd->add_option("--out", cos_out, "output directory")->required();

  std::string report_in, report_out;
  CLI::App* report_cmd = app.add_subcommand("report", "rewrite CSV files from a results.json");
  report_cmd->add_option("--in", report_in)->required();
  report_cmd->add_option("--out", report_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    fail(kIo, "missing-file", e.what());
  } catch (const CLI::ParseError& e) {
    fail(kUsage, "usage", e.what());
  }
  if (workers < 1) fail(kUsage, "usage", "--workers must be at least 1");

  try {
    CLI::App* sub = app.get_subcommands().front();
    json config = resolved_config(*sub);
    config["workers"] = workers;
    if (sub == gen_cmd) {
      run_gen_data(gen, config);
    } else if (sub == train_cmd) {
      run_train(tr, config);
    } else if (sub == attack_cmd) {
      run_attack_cmd(at, config, workers);
    } else if (sub == eval_cmd) {
      const LoadedPlan lp = load_plan(plan_path, workers);
      run_experiments(lp, lp.experiments, config, eval_out);
    } else if (sub == ablate_cmd) {
      const LoadedPlan lp = load_plan(ablate_plan, workers);
      const std::string e = sweep == "M" ? "sweep-M" : sweep == "beta" ? "sweep-beta" : sweep == "query" ? "query-matched" : "";
      if (e.empty()) throw svre::InvalidArgument("--sweep must be M, beta or query");
      run_experiments(lp, {e}, config, ablate_out);
    } else if (sub == cos_cmd) {
      std::vector<svre::NamedModel> models;
      for (const auto& p : cos_models) models.push_back(load_named(p));
      const auto images = svre::select_images(models, svre::load_images(test_path(cos_data)), cos_images);
      if (images.empty()) throw svre::InvalidArgument("no test image is classified correctly by every model");
      svre::ReportBundle bundle;
      bundle.cosine = svre::sign_gradient_cosine(models, images, workers);
      bundle.config = config.dump();
      svre::write_report(bundle, cos_out);
    } else if (sub == report_cmd) {
      svre::write_report(svre::load_report_json(report_in), report_out);
    }
  } catch (const svre::IoError& e) {
    fail(kIo, "io", e.what());
  } catch (const svre::ChecksumError& e) {
    fail(kFormat, "checksum", e.what());
  } catch (const svre::SpecMismatchError& e) {
    fail(kFormat, "spec-mismatch", e.what());
  } catch (const svre::FormatError& e) {
    fail(kFormat, "format", e.what());
  } catch (const svre::InvalidArgument& e) {
    fail(kUsage, "invalid-argument", e.what());
  } catch (const svre::QueryBudgetExceeded& e) {
    fail(kRuntime, "query-budget", e.what());
  } catch (const svre::Error& e) {
    fail(kRuntime, "runtime", e.what());
  } catch (const std::exception& e) {
    fail(kUnexpected, "unexpected", e.what());
  }
  return kOk;
}
