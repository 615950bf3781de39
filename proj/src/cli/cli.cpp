#include "catdet/cli/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "catdet/bench/bench.hpp"
#include "catdet/common/errors.hpp"
#include "catdet/config/run_config.hpp"
#include "catdet/data/evaluation.hpp"
#include "catdet/detector/train.hpp"

namespace catdet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kConfigFile = "config.json";
constexpr const char* kModelFile = "model.ckpt";
constexpr const char* kStateFile = "state.ckpt";
constexpr const char* kTrainLog = "train_log.csv";

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::string split;
  std::string mode;
  std::optional<std::size_t> layers;
  std::optional<std::size_t> dm;
  std::string data;
  std::string checkpoint;
  std::string axis;
  std::optional<int> sample;
  bool summary = false;
};

void add_model_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Run config JSON");
  cmd->add_option("--seed", f.seed, "Seed override");
  cmd->add_option("--mode", f.mode, "one_stream or two_stream");
  cmd->add_option("--layers", f.layers, "Number of CAT layers");
  cmd->add_option("--dm", f.dm, "CAT embedding width");
}

// Config file (or the config saved next to the checkpoint), then flag overrides.
config::RunConfig resolve_config(const Flags& f) {
  config::RunConfig c;
  if (!f.config.empty()) {
    c = config::RunConfig::load(f.config);
  } else if (!f.checkpoint.empty() && fs::exists(fs::path(f.checkpoint).parent_path() / kConfigFile)) {
    c = config::RunConfig::load(fs::path(f.checkpoint).parent_path() / kConfigFile);
  }
  if (f.seed) c.seed = *f.seed;
  if (!f.mode.empty()) c.model.cat.mode = cat::parse_mode(f.mode);
  if (f.layers) c.model.cat.layers = *f.layers;
  if (f.dm) c.model.cat.d_model = *f.dm;
  if (!f.data.empty()) c.data_dir = f.data;
  if (!f.out.empty()) c.out_dir = f.out;
  c.model.validate();
  return c;
}

std::size_t eval_workers() {
  const char* env = std::getenv("CAT_NUM_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("CAT_NUM_WORKERS must be a positive integer");
  return static_cast<std::size_t>(v);
}

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

data::Split eval_split(const Flags& f, const config::RunConfig& c) {
  return f.split.empty() ? c.eval.split : data::parse_split(f.split);
}

data::ProtocolReport evaluate(const det::Detector& model, const data::Dataset& ds, data::Split split,
                              std::size_t n_queries, std::size_t workers) {
  data::ProtocolOptions o;
  o.n_queries = n_queries;
  o.workers = workers;
  return data::evaluation_protocol(
      ds, split, [&](const data::OneShotSample& s, const data::Image& q) { return model.detect(s.target, q); }, o);
}

// Weights plus the config that built them. Shape mismatches mean the
// checkpoint belongs to another configuration.
det::Detector load_detector(const config::RunConfig& c, const fs::path& ckpt) {
  if (!fs::exists(ckpt)) throw DataError("checkpoint " + ckpt.string() + " not found");
  det::Detector model(c.model, c.seed);
  try {
    det::load_model(model, ckpt);
  } catch (const DimensionError& e) {
    throw DataError(ckpt.string() + " does not match the configured model: " + e.what());
  }
  return model;
}

fs::path checkpoint_path(const Flags& f, const config::RunConfig& c) {
  return f.checkpoint.empty() ? fs::path(c.out_dir) / kModelFile : fs::path(f.checkpoint);
}

int cmd_gen_data(const Flags& f, std::ostream& out) {
  auto c = resolve_config(f);
  if (f.seed) c.data.seed = *f.seed;
  const fs::path dir = f.out.empty() ? fs::path(c.data_dir) : fs::path(f.out);
  if (non_empty_dir(dir)) {
    if (!f.force) throw ConfigError(dir.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(dir);
  }
  const auto ds = data::generate_dataset(c.data);
  data::save_dataset(ds, dir);
  out << "dataset " << dir.string() << ": " << ds.samples.size() << " samples, "
      << ds.class_ids(false).size() << " seen / " << ds.class_ids(true).size() << " unseen classes\n"
      << "config_hash " << c.hash() << "\nmanifest_hash " << data::manifest_hash(dir) << '\n';
  return kOk;
}

int cmd_train(const Flags& f, std::ostream& out) {
  const auto c = resolve_config(f);
  const fs::path dir = c.out_dir;
  const auto hash = c.hash();
  const auto ds = data::load_dataset(c.data_dir);
  const std::size_t workers = eval_workers();

  bool resume = false;
  if (non_empty_dir(dir)) {
    const bool same = fs::exists(dir / kConfigFile) && config::RunConfig::load(dir / kConfigFile).hash() == hash;
    if (f.force) {
      fs::remove_all(dir);
    } else if (same && fs::exists(dir / kStateFile)) {
      resume = true;
    } else {
      throw ConfigError(dir.string() + " holds another run; pass --force to overwrite");
    }
  }
  fs::create_directories(dir);
  c.save(dir / kConfigFile);

  det::Detector model(c.model, c.seed);
  det::Trainer trainer(model, ds, c.train_config());
  if (resume) trainer.load_state(dir / kStateFile);

  std::ofstream log(dir / kTrainLog, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + (dir / kTrainLog).string());
  if (!resume) {
    log << "config_hash,epoch,lr,loss,objectness,match,regression,max_grad_norm,seconds,"
           "seen_AP,seen_AP50,unseen_AP,unseen_AP50\n";
  }
  out << "run " << hash << " -> " << dir.string() << (resume ? " (resumed at epoch " : "")
      << (resume ? std::to_string(trainer.epochs_done()) + ")" : "") << '\n';
  while (!trainer.finished()) {
    const auto r = trainer.run_epoch();
    const auto seen = evaluate(model, ds, data::Split::kSeen, c.eval.n_queries, workers);
    const auto unseen = evaluate(model, ds, data::Split::kUnseen, c.eval.n_queries, workers);
    log << hash << ',' << r.epoch << ',' << r.lr << ',' << fixed(r.loss, 6) << ',' << fixed(r.objectness, 6) << ','
        << fixed(r.match, 6) << ',' << fixed(r.regression, 6) << ',' << fixed(r.max_grad_norm, 4) << ','
        << fixed(r.seconds, 2) << ',' << fixed(seen.mean_ap, 6) << ',' << fixed(seen.mean_ap50, 6) << ','
        << fixed(unseen.mean_ap, 6) << ',' << fixed(unseen.mean_ap50, 6) << std::endl;
    trainer.save_state(dir / kStateFile);
    det::save_model(model, dir / kModelFile);
    out << "epoch " << r.epoch << " lr " << r.lr << " loss " << fixed(r.loss) << " seen AP50 " << fixed(seen.mean_ap50)
        << " unseen AP50 " << fixed(unseen.mean_ap50) << " (" << fixed(r.seconds, 1) << "s)" << std::endl;
  }
  det::save_model(model, dir / kModelFile);
  out << "checkpoint " << (dir / kModelFile).string() << '\n';
  return kOk;
}

json report_json(const data::ProtocolReport& r, const std::string& hash, const std::string& manifest) {
  json per = json::array();
  for (const auto& m : r.per_class) {
    per.push_back({{"class_id", m.class_id}, {"AP", m.ap}, {"AP50", m.ap50}, {"targets", m.targets}, {"rounds", m.rounds}});
  }
  return {{"config_hash", hash},
          {"manifest_hash", manifest},
          {"split", std::string(data::split_name(r.split))},
          {"n_queries", r.n_queries},
          {"AP", r.mean_ap},
          {"AP50", r.mean_ap50},
          {"per_class", per},
          {"notes", r.notes}};
}

int cmd_eval(const Flags& f, std::ostream& out) {
  const auto c = resolve_config(f);
  const auto split = eval_split(f, c);
  if (split == data::Split::kTrain) throw ConfigError("eval split must be seen or unseen");
  const auto ckpt = checkpoint_path(f, c);
  const auto model = load_detector(c, ckpt);
  const auto ds = data::load_dataset(c.data_dir);
  const auto rep = evaluate(model, ds, split, c.eval.n_queries, eval_workers());
  const auto j = report_json(rep, c.hash(), data::manifest_hash(c.data_dir));

  const fs::path dir = f.out.empty() ? ckpt.parent_path() : fs::path(f.out);
  fs::create_directories(dir);
  const auto path = dir / ("eval_" + std::string(data::split_name(split)) + ".json");
  std::ofstream(path) << j.dump(2) << '\n';

  out << "split " << data::split_name(split) << " config_hash " << c.hash() << '\n';
  out << "class    AP      AP50    targets rounds\n";
  for (const auto& m : rep.per_class) {
    out << std::left << std::setw(8) << m.class_id << ' ' << fixed(m.ap) << "  " << fixed(m.ap50) << "  "
        << std::setw(7) << m.targets << ' ' << m.rounds << '\n';
  }
  out << "mean     " << fixed(rep.mean_ap) << "  " << fixed(rep.mean_ap50) << '\n';
  for (const auto& n : rep.notes) out << "note: " << n << '\n';
  out << "wrote " << path.string() << '\n';
  return kOk;
}

void write_maps(const fs::path& dir, const std::vector<num::Tensor>& maps) {
  fs::create_directories(dir);
  for (std::size_t k = 0; k < maps.size(); ++k) {
    cat::write_response_pgm(dir / ("layer" + std::to_string(k) + ".pgm"), maps[k]);
    cat::write_response_csv(dir / ("layer" + std::to_string(k) + ".csv"), maps[k]);
  }
}

int cmd_attn_map(const Flags& f, std::ostream& out) {
  const auto c = resolve_config(f);
  const auto split = f.split.empty() ? data::Split::kUnseen : data::parse_split(f.split);
  const auto ckpt = checkpoint_path(f, c);
  const auto model = load_detector(c, ckpt);
  const auto ds = data::load_dataset(c.data_dir);
  const auto samples = ds.split(split);
  if (samples.empty()) throw DataError("split has no samples");
  const fs::path dir = f.out.empty() ? ckpt.parent_path() / "attn" : fs::path(f.out);
  const std::size_t stride = det::BackboneParams::kStride;

  if (f.summary) {
    fs::create_directories(dir);
    std::ofstream csv(dir / ("focus_" + std::string(data::split_name(split)) + ".csv"));
    csv << "config_hash,sample,focus_input,focus_final,improved\n";
    std::size_t improved = 0, counted = 0;
    for (const auto* s : samples) {
      const auto maps = model.response_maps(s->target, s->query);
      const double first = cat::focus_ratio(maps.front(), stride, s->gt_boxes);
      const double last = cat::focus_ratio(maps.back(), stride, s->gt_boxes);
      const bool up = last > first;  // false when either is NaN
      counted += !(std::isnan(first) || std::isnan(last));
      improved += up;
      csv << c.hash() << ',' << s->id << ',' << fixed(first, 6) << ',' << fixed(last, 6) << ',' << up << '\n';
    }
    out << "focus improved on " << improved << " / " << samples.size() << " samples ("
        << fixed(100.0 * static_cast<double>(improved) / static_cast<double>(samples.size()), 1) << "%, "
        << samples.size() - counted << " undefined)\n";
    return kOk;
  }

  const data::OneShotSample* s = samples.front();
  if (f.sample) {
    s = nullptr;
    for (const auto* p : samples) {
      if (p->id == *f.sample) s = p;
    }
    if (s == nullptr) throw DataError("sample " + std::to_string(*f.sample) + " is not in split " +
                                      std::string(data::split_name(split)));
  }
  const auto maps = model.response_maps(s->target, s->query);
  const auto sdir = dir / ("sample_" + std::to_string(s->id));
  write_maps(sdir, maps);
  std::ofstream csv(sdir / "focus.csv");
  csv << "config_hash,sample,layer,focus_ratio\n";
  out << "sample " << s->id << " (" << maps.size() << " maps) -> " << sdir.string() << '\n';
  for (std::size_t k = 0; k < maps.size(); ++k) {
    const double r = cat::focus_ratio(maps[k], stride, s->gt_boxes);
    csv << c.hash() << ',' << s->id << ',' << k << ',' << fixed(r, 6) << '\n';
    out << "layer " << k << " focus " << fixed(r) << '\n';
  }
  return kOk;
}

int cmd_bench(const Flags& f, std::ostream& out, std::ostream& err) {
  auto c = resolve_config(f);
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  if (f.axis.empty() || f.axis == "fps") {
    const det::Detector model(c.model, c.seed);
    const auto rep = bench::measure_fps(model, bench::synthetic_pair(c.model, c.seed), c.bench.warmup,
                                        c.bench.iters, c.hash());
    const auto path = dir / ("bench_" + c.hash() + ".json");
    std::ofstream(path) << rep.to_json().dump(2) << '\n';
    out << "d_m " << rep.d_model << " heads " << rep.heads << " layers " << rep.layers << ' ' << rep.mode
        << " params " << rep.params << " cat_params " << rep.cat_params << " fps " << fixed(rep.fps, 2) << '\n'
        << "wrote " << path.string() << '\n';
    return kOk;
  }
  const auto axis = bench::parse_axis(f.axis);
  if (f.seed) c.bench.seeds = {*f.seed};
  if (!f.split.empty()) c.bench.splits = {data::parse_split(f.split)};
  const auto ds = data::load_dataset(c.data_dir);
  bench::AblationOptions opt;
  opt.cache_dir = dir / "cache";
  opt.log = &err;
  opt.eval_workers = eval_workers();
  const auto rows = bench::run_ablation(ds, c, axis, bench::axis_values(c, axis), c.bench.seeds, opt);
  const auto path = dir / ("ablation_" + std::string(bench::axis_name(axis)) + ".csv");
  std::ofstream csv(path);
  bench::write_ablation_csv(csv, rows);
  bench::write_ablation_csv(out, rows);
  out << "wrote " << path.string() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"One-shot detection with a cross-attention transformer"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset");
  gen->add_option("--config", f.config, "Run config JSON");
  gen->add_option("--seed", f.seed, "Generator seed override");
  gen->add_option("--out", f.out, "Dataset directory");
  gen->add_flag("--force", f.force, "Overwrite a non-empty directory");

  auto* train = app.add_subcommand("train", "Train on the seen-class split");
  add_model_flags(train, f);
  train->add_option("--data", f.data, "Dataset directory");
  train->add_option("--out", f.out, "Run directory");
  train->add_flag("--force", f.force, "Discard an existing run directory");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_model_flags(eval, f);
  eval->add_option("--data", f.data, "Dataset directory");
  eval->add_option("--checkpoint", f.checkpoint, "Model checkpoint");
  eval->add_option("--split", f.split, "seen or unseen")->check(CLI::IsMember({"seen", "unseen"}));
  eval->add_option("--out", f.out, "Report directory");

  auto* attn = app.add_subcommand("attn-map", "Export per-layer response maps and focus ratios");
  add_model_flags(attn, f);
  attn->add_option("--data", f.data, "Dataset directory");
  attn->add_option("--checkpoint", f.checkpoint, "Model checkpoint");
  attn->add_option("--split", f.split, "seen or unseen")->check(CLI::IsMember({"seen", "unseen"}));
  attn->add_option("--sample", f.sample, "Sample id (default: first of the split)");
  attn->add_flag("--summary", f.summary, "Focus ratios over the whole split");
  attn->add_option("--out", f.out, "Output directory");

  auto* bench = app.add_subcommand("bench", "Throughput and ablation sweeps");
  add_model_flags(bench, f);
  bench->add_option("--data", f.data, "Dataset directory");
  bench->add_option("--out", f.out, "Output directory");
  bench->add_option("--axis", f.axis, "fps, layers, d_m or stream")
      ->check(CLI::IsMember({"fps", "layers", "d_m", "dm", "stream"}));
  bench->add_option("--split", f.split, "seen or unseen")->check(CLI::IsMember({"seen", "unseen"}));

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f, out);
    if (train->parsed()) return cmd_train(f, out);
    if (eval->parsed()) return cmd_eval(f, out);
    if (attn->parsed()) return cmd_attn_map(f, out);
    return cmd_bench(f, out, err);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const InputError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ContractError& e) {
    err << "contract violation: " << e.what() << '\n';
    return kContract;
  } catch (const DimensionError& e) {
    err << "contract violation: " << e.what() << '\n';
    return kContract;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUnexpected;
  }
}

}  // namespace catdet::cli
