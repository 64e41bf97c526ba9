// stf: command-line front end for synthetic data generation, filter learning,
// classifier training, evaluation and the sweep experiments.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stf/fingerprint.hpp"
#include "stf/stf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class T>
std::vector<T> split_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      std::istringstream is(item);
      T v{};
      if (!(is >> v) || !is.eof()) throw CLI::ValidationError("list", "bad list element '" + item + "'");
      out.push_back(v);
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw stf::IoError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Options shared by every pipeline subcommand. Values come from the config file first;
/// flags given on the command line override individual keys.
struct Common {
  std::string config_path;
  std::string manifest;
  std::string run_dir = "run";
  std::uint64_t seed = 1;
  unsigned threads = stf::default_threads();
  std::string method;
  int n_filters = 0;
  double alpha = 0;
  int epochs = 0;
  std::size_t m_samples = 0;
  std::int64_t t_vox = 0;
  int a = 0, k = 0, pool = 0;
  std::string protocol;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* method_opt = nullptr;
  CLI::Option* n_filters_opt = nullptr;
  CLI::Option* alpha_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* m_opt = nullptr;
  CLI::Option* tvox_opt = nullptr;
  CLI::Option* a_opt = nullptr;
  CLI::Option* k_opt = nullptr;
  CLI::Option* pool_opt = nullptr;
  CLI::Option* manifest_opt = nullptr;
  CLI::Option* run_opt = nullptr;
  CLI::Option* protocol_opt = nullptr;

  void attach(CLI::App* app, bool needs_manifest) {
    app->add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
    manifest_opt = app->add_option("--manifest", manifest, "dataset manifest (JSON)");
    if (needs_manifest) manifest_opt->check(CLI::ExistingFile);
    run_opt = app->add_option("--run", run_dir, "run directory (filters/, model/, reports/)");
    seed_opt = app->add_option("--seed", seed, "master random seed");
    app->add_option("--threads", threads, "worker threads");
    method_opt = app->add_option("--method", method, "filter method: sfa | pca | random");
    n_filters_opt = app->add_option("--n-filters", n_filters, "number of filters");
    alpha_opt = app->add_option("--alpha", alpha, "tanh coefficient");
    epochs_opt = app->add_option("--epochs", epochs, "CNN training epochs");
    m_opt = app->add_option("--m-samples", m_samples, "ROI samples for filter learning");
    tvox_opt = app->add_option("--t-vox", t_vox, "voxel duration (us)");
    a_opt = app->add_option("--a", a, "filter spatial size");
    k_opt = app->add_option("--k", k, "filter depth in bins");
    pool_opt = app->add_option("--pool", pool, "spatial max-pool factor");
    protocol_opt = app->add_option("--protocol", protocol, "evaluation preset: action | gesture");
  }

  json config_json() const {
    if (config_path.empty()) return json::object();
    std::ifstream in(config_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw stf::Error("config " + config_path + ": " + e.what());
    }
    return j;
  }

  stf::PipelineParams params() {
    const json cfg = config_json();
    stf::PipelineParams p;
    stf::params_from_json(cfg, p);
    if (cfg.contains("manifest") && !*manifest_opt) manifest = cfg["manifest"].get<std::string>();
    if (cfg.contains("run_dir") && !*run_opt) run_dir = cfg["run_dir"].get<std::string>();
    if (cfg.contains("protocol_preset") && !*protocol_opt) protocol = cfg["protocol_preset"].get<std::string>();
    if (*seed_opt) p.seed = seed;
    if (*method_opt) p.method = stf::filter_method_from_string(method);
    if (*n_filters_opt) p.n_filters = n_filters;
    if (*alpha_opt) p.alpha = alpha;
    if (*epochs_opt) p.optimizer.epochs = epochs;
    if (*m_opt) p.m_samples = m_samples;
    if (*tvox_opt) p.t_vox = t_vox;
    if (*a_opt) p.a = a;
    if (*k_opt) p.k = k;
    if (*pool_opt) p.pool = pool;
    if (protocol == "action") p.protocol = stf::EvalProtocol::action();
    else if (protocol == "gesture") {
      p.protocol = stf::EvalProtocol::gesture();
      if (!*n_filters_opt && !cfg.contains("n_filters")) p.n_filters = stf::kGestureFilterCount;
    } else if (!protocol.empty()) throw stf::PreconditionError("unknown protocol preset '" + protocol + "'");
    p.threads = threads;
    return p;
  }

  stf::DatasetManifest load_manifest() const {
    if (manifest.empty()) throw CLI::RequiredError("--manifest");
    return stf::load_manifest(manifest);
  }
};

void write_run_record(const fs::path& run, const std::string& command, const stf::PipelineParams& p,
                      const std::string& manifest) {
  json artifacts = json::object();
  for (const char* sub : {"filters", "model", "reports"})
    for (const auto& [rel, digest] : stf::hash_tree(run / sub)) artifacts[std::string(sub) + "/" + rel] = digest;
  json rec{{"command", command}, {"config", stf::params_to_json(p)}, {"seed", p.seed},
           {"manifest", manifest}, {"artifacts", artifacts}};
  if (!manifest.empty() && fs::exists(manifest)) rec["manifest_sha256"] = stf::sha256_file(manifest);
  write_json(run / "run.json", rec);
}

void write_report(const fs::path& dir, const std::string& stem, const stf::EvalReport& r) {
  write_json(dir / (stem + ".json"), stf::report_to_json(r));
  std::ostringstream os;
  stf::write_confusion_csv(os, r);
  write_text(dir / (stem + "_confusion.csv"), os.str());
}

std::string f1_header(const std::vector<std::string>& categories) {
  std::string h;
  for (const auto& c : categories) h += ",f1_" + c;
  return h;
}

std::string f1_cells(const stf::EvalReport& r) {
  std::string s;
  char buf[40];
  for (double f : r.per_class_f1) {
    std::snprintf(buf, sizeof buf, ",%.6f", f);
    s += buf;
  }
  return s;
}

std::vector<stf::SceneSpec> parse_classes(const std::string& list, double velocity, std::int64_t duration,
                                          double rate, double noise) {
  std::vector<stf::SceneSpec> specs;
  for (const auto& item : split_list<std::string>(list)) {
    stf::SceneSpec s;
    std::string body = item;
    if (auto eq = body.find('='); eq != std::string::npos) {
      s.name = body.substr(0, eq);
      body = body.substr(eq + 1);
    }
    s.velocity = velocity;
    if (auto colon = body.find(':'); colon != std::string::npos) {
      s.velocity = std::stod(body.substr(colon + 1));
      body = body.substr(0, colon);
    }
    s.pattern = stf::pattern_from_string(body);
    s.duration = duration;
    s.event_rate = rate;
    s.background_noise_rate = noise;
    s.class_id = static_cast<int>(specs.size());
    specs.push_back(s);
  }
  return specs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatiotemporal filter learning and event-based classification"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic labelled event dataset");
  std::string synth_out, synth_classes = "moving_bar,rotating_edge,expanding_ring,clap";
  stf::DatasetOptions dopt;
  double synth_velocity = 24.0, synth_rate = 5000.0, synth_noise = 0.2;
  std::int64_t synth_duration = 1'200'000;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--classes", synth_classes, "comma list of [name=]pattern[:velocity]");
  synth->add_option("--width", dopt.geometry.width);
  synth->add_option("--height", dopt.geometry.height);
  synth->add_option("--train-subjects", dopt.n_subjects_train);
  synth->add_option("--test-subjects", dopt.n_subjects_test);
  synth->add_option("--reps", dopt.recordings_per_subject, "recordings per subject and class");
  synth->add_option("--velocity", synth_velocity, "default pattern speed (px/s)");
  synth->add_option("--duration", synth_duration, "recording duration (us)");
  synth->add_option("--rate", synth_rate, "edge event rate (events/s)");
  synth->add_option("--noise", synth_noise, "background rate (events/s/pixel)");
  synth->add_option("--rate-jitter", dopt.rate_jitter, "per-recording multiplicative event-rate jitter");
  synth->add_option("--velocity-jitter", dopt.velocity_jitter);
  synth->add_option("--seed", dopt.seed);

  Common learn_c, train_c, eval_c, sweepf_c, sweepn_c, compare_c, shift_c;

  auto* learn = app.add_subcommand("learn-filters", "learn a filter bank and fit its normalisation");
  learn_c.attach(learn, true);

  auto* exportf = app.add_subcommand("export-filters", "write filter cross-sections as PGM plus JSON weights");
  std::string export_bank, export_out;
  exportf->add_option("--bank", export_bank, "filter bank JSON")->required()->check(CLI::ExistingFile);
  exportf->add_option("--out", export_out, "output directory")->required();

  auto* trainc = app.add_subcommand("train", "learn filters and train the classifier");
  train_c.attach(trainc, true);
  std::string train_bank;
  trainc->add_option("--bank", train_bank, "reuse an existing filter bank")->check(CLI::ExistingFile);

  auto* evalc = app.add_subcommand("eval", "evaluate a trained system on the test split");
  eval_c.attach(evalc, true);
  std::string eval_bank, eval_model;
  evalc->add_option("--bank", eval_bank, "filter bank JSON")->required()->check(CLI::ExistingFile);
  evalc->add_option("--model", eval_model, "model file")->required()->check(CLI::ExistingFile);

  auto* sweepf = app.add_subcommand("sweep-filters", "accuracy as a function of filter count");
  sweepf_c.attach(sweepf, true);
  std::string counts_list = "1,3,6,9,12";
  sweepf->add_option("--counts", counts_list, "comma list of filter counts");

  auto* sweepn = app.add_subcommand("sweep-noise", "accuracy under timestamp jitter");
  sweepn_c.attach(sweepn, true);
  std::string noise_bank, noise_model, deltas_list = "0,2000,4000,8000,16000,32000";
  sweepn->add_option("--bank", noise_bank, "filter bank JSON")->required()->check(CLI::ExistingFile);
  sweepn->add_option("--model", noise_model, "model file")->required()->check(CLI::ExistingFile);
  sweepn->add_option("--deltas", deltas_list, "comma list of jitter half-widths (us)");

  auto* compare = app.add_subcommand("compare-methods", "train and evaluate sfa, pca and random banks");
  compare_c.attach(compare, true);
  std::string methods_list = "sfa,pca,random";
  compare->add_option("--methods", methods_list);

  auto* shift = app.add_subcommand("response-shift", "response change under random event removal");
  shift_c.attach(shift, true);
  std::string shift_bank;
  std::vector<std::string> shift_extra;
  double shift_fraction = 0.1;
  std::size_t shift_samples = 1000;
  shift->add_option("--bank", shift_bank, "filter bank JSON")->required()->check(CLI::ExistingFile);
  shift->add_option("--compare-bank", shift_extra, "additional banks measured on the same ROIs");
  shift->add_option("--fraction", shift_fraction, "fraction of events removed");
  shift->add_option("--samples", shift_samples, "number of ROIs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*synth) {
      auto specs = parse_classes(synth_classes, synth_velocity, synth_duration, synth_rate, synth_noise);
      const auto m = stf::build_dataset(specs, dopt, synth_out);
      std::cout << "wrote " << m.recordings.size() << " recordings (" << m.count(stf::Split::train) << " train / "
                << m.count(stf::Split::test) << " test) to " << synth_out << "\n";
      return 0;
    }
    if (*exportf) {
      stf::export_filters(stf::load_bank(export_bank), export_out);
      return 0;
    }
    if (*learn) {
      auto p = learn_c.params();
      const auto m = learn_c.load_manifest();
      const auto recs = stf::load_split(m, stf::Split::train, p.threads);
      if (recs.empty()) throw stf::InsufficientDataError("manifest has an empty train split");
      const auto bank = stf::fit_bank_normalization(stf::learn_bank(recs, p, p.n_filters), recs, p.threads);
      const fs::path run = learn_c.run_dir;
      stf::save_bank(bank, run / "filters" / "bank.json");
      write_run_record(run, "learn-filters", p, learn_c.manifest);
      return 0;
    }
    if (*trainc) {
      auto p = train_c.params();
      const auto m = train_c.load_manifest();
      stf::TrainedSystem sys;
      if (!train_bank.empty()) {
        const auto recs = stf::load_split(m, stf::Split::train, p.threads);
        if (recs.empty()) throw stf::InsufficientDataError("manifest has an empty train split");
        sys = stf::train_classifier(stf::load_bank(train_bank), m, recs, p);
      } else {
        sys = stf::run_training(m, p);
      }
      const fs::path run = train_c.run_dir;
      stf::save_bank(sys.bank, run / "filters" / "bank.json");
      stf::save_model(sys.model, run / "model" / "model.bin");
      std::ostringstream os;
      stf::write_history_csv(os, sys.history);
      write_text(run / "reports" / "history.csv", os.str());
      write_run_record(run, "train", p, train_c.manifest);
      if (!sys.history.empty())
        std::cout << "final epoch loss " << sys.history.back().loss << ", train accuracy "
                  << sys.history.back().train_accuracy << "\n";
      return 0;
    }
    if (*evalc) {
      auto p = eval_c.params();
      const auto m = eval_c.load_manifest();
      const auto bank = stf::load_bank(eval_bank);
      const auto model = stf::load_model(eval_model);
      auto r = stf::evaluate(m, bank, model, p.protocol, p.pool, p.threads);
      r.config = stf::params_to_json(p);
      const fs::path run = eval_c.run_dir;
      write_report(run / "reports", "eval", r);
      write_run_record(run, "eval", p, eval_c.manifest);
      std::cout << "accuracy " << r.overall_accuracy << "\n";
      return 0;
    }
    if (*sweepf) {
      auto p = sweepf_c.params();
      const auto m = sweepf_c.load_manifest();
      const auto counts = split_list<int>(counts_list);
      const auto rows = stf::sweep_filter_count(m, p, counts);
      std::string csv = "n_filters,overall_accuracy" + f1_header(m.categories) + "\n";
      json j = json::array();
      for (const auto& row : rows) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%d,%.6f", row.n_filters, row.report.overall_accuracy);
        csv += buf + f1_cells(row.report) + "\n";
        j.push_back({{"n_filters", row.n_filters}, {"report", stf::report_to_json(row.report)}});
      }
      const fs::path run = sweepf_c.run_dir;
      write_text(run / "reports" / "sweep_filters.csv", csv);
      write_json(run / "reports" / "sweep_filters.json", j);
      write_run_record(run, "sweep-filters", p, sweepf_c.manifest);
      std::cout << csv;
      return 0;
    }
    if (*sweepn) {
      auto p = sweepn_c.params();
      const auto m = sweepn_c.load_manifest();
      const auto deltas = split_list<std::int64_t>(deltas_list);
      const auto rows = stf::sweep_timestamp_noise(m, stf::load_bank(noise_bank), stf::load_model(noise_model),
                                                   deltas, p.protocol, p.pool, p.seed, p.threads);
      std::string csv = "t_delta_us,overall_accuracy" + f1_header(m.categories) + "\n";
      json j = json::array();
      for (const auto& row : rows) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%lld,%.6f", static_cast<long long>(row.t_delta), row.report.overall_accuracy);
        csv += buf + f1_cells(row.report) + "\n";
        j.push_back({{"t_delta_us", row.t_delta}, {"report", stf::report_to_json(row.report)}});
      }
      const fs::path run = sweepn_c.run_dir;
      write_text(run / "reports" / "sweep_noise.csv", csv);
      write_json(run / "reports" / "sweep_noise.json", j);
      write_run_record(run, "sweep-noise", p, sweepn_c.manifest);
      std::cout << csv;
      return 0;
    }
    if (*compare) {
      auto p = compare_c.params();
      const auto m = compare_c.load_manifest();
      std::vector<stf::FilterMethod> methods;
      for (const auto& s : split_list<std::string>(methods_list)) methods.push_back(stf::filter_method_from_string(s));
      const auto rows = stf::compare_methods(m, p, methods);
      std::string csv = "method,overall_accuracy" + f1_header(m.categories) + "\n";
      json j = json::array();
      for (const auto& row : rows) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s,%.6f", stf::to_string(row.method), row.report.overall_accuracy);
        csv += buf + f1_cells(row.report) + "\n";
        j.push_back({{"method", stf::to_string(row.method)}, {"report", stf::report_to_json(row.report)}});
      }
      const fs::path run = compare_c.run_dir;
      write_text(run / "reports" / "compare_methods.csv", csv);
      write_json(run / "reports" / "compare_methods.json", j);
      write_run_record(run, "compare-methods", p, compare_c.manifest);
      std::cout << csv;
      return 0;
    }
    if (*shift) {
      auto p = shift_c.params();
      const auto m = shift_c.load_manifest();
      const auto bank = stf::load_bank(shift_bank);
      const auto recs = stf::load_split(m, stf::Split::train, p.threads);
      stf::PipelineParams q = p;
      q.a = bank.a;
      q.k = bank.k;
      q.t_vox = bank.t_vox;
      q.m_samples = shift_samples;
      const auto samples = stf::sample_training_rois(recs, q);
      std::vector<std::pair<std::string, stf::FilterBank>> banks{{shift_bank, bank}};
      for (const auto& path : shift_extra) banks.emplace_back(path, stf::load_bank(path));
      std::string csv = "bank,method,filter,shift\n";
      for (const auto& [path, b] : banks) {
        const auto s = stf::mean_response_shift(b, samples, shift_fraction, stf::derive_seed(p.seed, 0x5f));
        double mean = 0;
        for (std::size_t f = 0; f < s.size(); ++f) {
          char buf[64];
          std::snprintf(buf, sizeof buf, ",%zu,%.9g\n", f, s[f]);
          csv += path + "," + stf::to_string(b.method) + buf;
          mean += s[f] / static_cast<double>(s.size());
        }
        std::cout << path << " (" << stf::to_string(b.method) << "): mean shift " << mean << "\n";
      }
      const fs::path run = shift_c.run_dir;
      write_text(run / "reports" / "response_shift.csv", csv);
      write_run_record(run, "response-shift", p, shift_c.manifest);
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
