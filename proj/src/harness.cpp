#include "ntk/harness.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "json.hpp"
#include "ntk/format.hpp"
#include "ntk/rng.hpp"

namespace ntk {

using nlohmann::json;

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  auto regime_ok = [](const std::string& r) {
    return r == "benign" || r == "adversarial" || r == "mixed";
  };
  if (dataset.kind != "blobs" && dataset.kind != "spirals" &&
      dataset.kind != "gratings" && dataset.kind != "cifar10")
    throw std::invalid_argument("config: unknown dataset kind " + dataset.kind);
  if (arch != "mlp" && arch != "small_cnn")
    throw std::invalid_argument("config: unknown arch " + arch);
  if (!regime_ok(stage1.regime) || !regime_ok(stage2.regime))
    throw std::invalid_argument("config: unknown regime");
  dyn_kind_from_name(stage2.dynamics);
  if (stage2.bn_policy != "frozen" && stage2.bn_policy != "standard")
    throw std::invalid_argument("config: unknown bn policy " + stage2.bn_policy);
  if (stage1.epochs < 0 || stage2.epochs < 0)
    throw std::invalid_argument("config: negative epoch count");
  if (stage2.spawn_epoch < 0 || stage2.spawn_epoch > stage1.epochs)
    throw std::invalid_argument("config: spawn epoch outside stage 1");
  for (int e : kernels.epochs)
    if (e < 0 || e > stage1.epochs)
      throw std::invalid_argument("config: kernel schedule epoch outside stage 1");
  if (!std::is_sorted(kernels.epochs.begin(), kernels.epochs.end()) ||
      std::adjacent_find(kernels.epochs.begin(), kernels.epochs.end()) !=
          kernels.epochs.end())
    throw std::invalid_argument("config: kernel schedule must strictly increase");
  if (stage1.batch_size < 1 || stage2.batch_size < 1)
    throw std::invalid_argument("config: batch size must be positive");
  if (precision != 32 && precision != 64)
    throw std::invalid_argument("config: precision must be 32 or 64");
  if (kernels.subset < dataset.classes || kernels.subset % dataset.classes != 0)
    throw std::invalid_argument("config: kernel subset must be a positive class multiple");
  if (eval.subset < dataset.classes || eval.subset % dataset.classes != 0)
    throw std::invalid_argument("config: eval subset must be a positive class multiple");
  if (out_dir.empty()) throw std::invalid_argument("config: empty output dir");
  train_pgd.validate();
  eval.pgd.validate();
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) ok = true;
    if (!ok) throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

json pgd_to_json(const PgdConfig& p) {
  return {{"epsilon", p.epsilon}, {"steps", p.steps},         {"alpha", p.alpha},
          {"random_init", p.random_init}, {"clip_lo", p.clip_lo}, {"clip_hi", p.clip_hi},
          {"chunk", p.chunk}};
}

PgdConfig pgd_from_json(const json& j, const std::string& where) {
  check_keys(j, {"epsilon", "steps", "alpha", "random_init", "clip_lo", "clip_hi", "chunk"},
             where);
  PgdConfig p;
  get_if(j, "epsilon", p.epsilon);
  get_if(j, "steps", p.steps);
  get_if(j, "alpha", p.alpha);
  get_if(j, "random_init", p.random_init);
  get_if(j, "clip_lo", p.clip_lo);
  get_if(j, "clip_hi", p.clip_hi);
  get_if(j, "chunk", p.chunk);
  return p;
}

json config_to_json_obj(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"kind", c.dataset.kind},       {"n_train", c.dataset.n_train},
                  {"n_test", c.dataset.n_test},   {"classes", c.dataset.classes},
                  {"d", c.dataset.d},             {"margin", c.dataset.margin},
                  {"sigma", c.dataset.sigma},     {"cifar_dir", c.dataset.cifar_dir},
                  {"cifar_classes", c.dataset.cifar_classes}};
  j["arch"] = c.arch;
  j["plan"] = c.plan;
  j["stage1"] = {{"regime", c.stage1.regime},     {"t_switch", c.stage1.t_switch},
                 {"epochs", c.stage1.epochs},     {"lr", c.stage1.lr},
                 {"momentum", c.stage1.momentum}, {"batch_size", c.stage1.batch_size}};
  j["stage2"] = {{"dynamics", c.stage2.dynamics}, {"spawn_epoch", c.stage2.spawn_epoch},
                 {"regime", c.stage2.regime},     {"t_switch", c.stage2.t_switch},
                 {"epochs", c.stage2.epochs},     {"lr", c.stage2.lr},
                 {"momentum", c.stage2.momentum}, {"batch_size", c.stage2.batch_size},
                 {"bn_policy", c.stage2.bn_policy}, {"bn_ablation", c.stage2.bn_ablation}};
  j["train_pgd"] = pgd_to_json(c.train_pgd);
  j["eval"] = {{"pgd", pgd_to_json(c.eval.pgd)}, {"subset", c.eval.subset}};
  j["kernels"] = {{"epochs", c.kernels.epochs}, {"subset", c.kernels.subset}};
  j["precision"] = c.precision;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  return j;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) {
  return config_to_json_obj(cfg).dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  json j = json::parse(text);
  check_keys(j,
             {"dataset", "arch", "plan", "stage1", "stage2", "train_pgd", "eval",
              "kernels", "precision", "seed", "out_dir"},
             "config");
  ExperimentConfig c;
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d,
               {"kind", "n_train", "n_test", "classes", "d", "margin", "sigma",
                "cifar_dir", "cifar_classes"},
               "dataset");
    get_if(d, "kind", c.dataset.kind);
    get_if(d, "n_train", c.dataset.n_train);
    get_if(d, "n_test", c.dataset.n_test);
    get_if(d, "classes", c.dataset.classes);
    get_if(d, "d", c.dataset.d);
    get_if(d, "margin", c.dataset.margin);
    get_if(d, "sigma", c.dataset.sigma);
    get_if(d, "cifar_dir", c.dataset.cifar_dir);
    get_if(d, "cifar_classes", c.dataset.cifar_classes);
  }
  get_if(j, "arch", c.arch);
  get_if(j, "plan", c.plan);
  if (j.contains("stage1")) {
    const json& s = j["stage1"];
    check_keys(s, {"regime", "t_switch", "epochs", "lr", "momentum", "batch_size"},
               "stage1");
    get_if(s, "regime", c.stage1.regime);
    get_if(s, "t_switch", c.stage1.t_switch);
    get_if(s, "epochs", c.stage1.epochs);
    get_if(s, "lr", c.stage1.lr);
    get_if(s, "momentum", c.stage1.momentum);
    get_if(s, "batch_size", c.stage1.batch_size);
  }
  if (j.contains("stage2")) {
    const json& s = j["stage2"];
    check_keys(s,
               {"dynamics", "spawn_epoch", "regime", "t_switch", "epochs", "lr",
                "momentum", "batch_size", "bn_policy", "bn_ablation"},
               "stage2");
    get_if(s, "dynamics", c.stage2.dynamics);
    get_if(s, "spawn_epoch", c.stage2.spawn_epoch);
    get_if(s, "regime", c.stage2.regime);
    get_if(s, "t_switch", c.stage2.t_switch);
    get_if(s, "epochs", c.stage2.epochs);
    get_if(s, "lr", c.stage2.lr);
    get_if(s, "momentum", c.stage2.momentum);
    get_if(s, "batch_size", c.stage2.batch_size);
    get_if(s, "bn_policy", c.stage2.bn_policy);
    get_if(s, "bn_ablation", c.stage2.bn_ablation);
  }
  if (j.contains("train_pgd")) c.train_pgd = pgd_from_json(j["train_pgd"], "train_pgd");
  if (j.contains("eval")) {
    check_keys(j["eval"], {"pgd", "subset"}, "eval");
    if (j["eval"].contains("pgd")) c.eval.pgd = pgd_from_json(j["eval"]["pgd"], "eval.pgd");
    get_if(j["eval"], "subset", c.eval.subset);
  }
  if (j.contains("kernels")) {
    check_keys(j["kernels"], {"epochs", "subset"}, "kernels");
    get_if(j["kernels"], "epochs", c.kernels.epochs);
    get_if(j["kernels"], "subset", c.kernels.subset);
  }
  get_if(j, "precision", c.precision);
  get_if(j, "seed", c.seed);
  get_if(j, "out_dir", c.out_dir);
  return c;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // nlohmann objects iterate in key order, so dump() is canonical
  const std::string canon = config_to_json_obj(cfg).dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canon)));
  return buf;
}

// ---------------------------------------------------------------- plumbing

Dataset build_dataset(const DatasetSpec& s, uint64_t seed) {
  if (s.kind == "blobs")
    return gen_blobs(s.n_train, s.n_test, s.classes, s.d, seed, s.margin, s.sigma);
  if (s.kind == "spirals") return gen_spirals(s.n_train, s.n_test, seed);
  if (s.kind == "gratings") return gen_gratings(s.n_train, s.n_test, seed);
  if (s.kind == "cifar10")
    return load_cifar10_bin(s.cifar_dir, s.n_train, s.n_test, s.cifar_classes, seed);
  throw std::invalid_argument("build_dataset: unknown kind " + s.kind);
}

Architecture make_architecture(const ExperimentConfig& cfg, const Dataset& ds) {
  Architecture a;
  a.kind = cfg.arch == "mlp" ? ArchKind::mlp : ArchKind::small_cnn;
  a.plan = cfg.plan;
  a.class_count = ds.class_count;
  a.input_shape.assign(ds.train_x.shape.begin() + 1, ds.train_x.shape.end());
  return a;
}

Precision precision_of(const ExperimentConfig& cfg) {
  return cfg.precision == 32 ? Precision::f32 : Precision::f64;
}

void train_stage(DynamicsModel& m, const Tensor& X, const std::vector<int>& y,
                 const std::string& regime, int t_switch, int epochs, double lr,
                 double momentum, int batch_size, const PgdConfig& pgd,
                 uint64_t root_seed, const std::string& stream_tag, int start_epoch,
                 const EpochHook& hook) {
  const int N = X.dim(0);
  if (N != static_cast<int>(y.size()))
    throw std::invalid_argument("train_stage: label count mismatch");
  std::vector<int> order(static_cast<size_t>(N));
  for (int e = 0; e < epochs; ++e) {
    const int epoch = start_epoch + e;
    const bool adversarial =
        regime == "adversarial" || (regime == "mixed" && e >= t_switch);
    std::iota(order.begin(), order.end(), 0);
    {
      std::mt19937_64 rng(
          substream_seed(root_seed, stream_tag + "/shuffle/" + std::to_string(epoch)));
      std::shuffle(order.begin(), order.end(), rng);
    }
    int batch_index = 0;
    for (int b = 0; b < N; b += batch_size, ++batch_index) {
      const int hi = std::min(b + batch_size, N);
      std::vector<int> idx(order.begin() + b, order.begin() + hi);
      Tensor xb = take_rows(X, idx);
      std::vector<int> yb = take_labels(y, idx);
      const uint64_t pgd_seed =
          substream_seed(root_seed, stream_tag + "/pgd/" + std::to_string(epoch) +
                                        "/" + std::to_string(batch_index));
      sgd_step(m, xb, yb, lr, momentum, LossKind::cross_entropy,
               adversarial ? &pgd : nullptr, pgd_seed);
    }
    if (hook) hook(epoch + 1, m);
  }
}

ModelSnapshot feature_snapshot(const DynamicsModel& m, int epoch,
                               const std::string& tag) {
  ModelSnapshot s;
  s.arch = m.arch;
  const bool tangent_kind =
      m.kind == DynKind::linearized || m.kind == DynKind::centered;
  s.params = tangent_kind && m.parent ? m.parent->params : m.params;
  s.bn_stats = (m.bn_policy == BnPolicy::frozen && m.parent) ? m.parent->bn_stats
                                                             : m.stats;
  s.spawn_epoch = epoch;
  s.tag = tag.empty() ? dyn_kind_name(m.kind) : tag;
  return s;
}

// ---------------------------------------------------------------- csv

CsvWriter::CsvWriter(const std::filesystem::path& file, const std::string& hash,
                     const std::vector<std::string>& columns)
    : os_(file, std::ios::binary), columns_(columns.size()), file_(file) {
  if (!os_) throw std::runtime_error("csv: cannot open " + file.string());
  os_ << "# config_hash=" << hash << '\n';
  for (size_t i = 0; i < columns.size(); ++i)
    os_ << columns[i] << (i + 1 < columns.size() ? ',' : '\n');
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) throw std::invalid_argument("csv: cell count mismatch");
  for (size_t i = 0; i < cells.size(); ++i)
    os_ << cells[i] << (i + 1 < cells.size() ? ',' : '\n');
}

void CsvWriter::close() {
  if (os_.is_open()) {
    os_.flush();
    if (!os_) throw std::runtime_error("csv: write failed for " + file_.string());
    os_.close();
  }
}

CsvWriter::~CsvWriter() {
  if (os_.is_open()) os_.close();
}

std::string read_artifact_hash(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("artifact: cannot open " + file.string());
  std::string line;
  std::getline(is, line);
  const std::string stamp = "# config_hash=";
  if (line.rfind(stamp, 0) == 0) return line.substr(stamp.size());
  // binary artifacts carry a one-line JSON header; plain JSON files may be
  // pretty-printed, so fall back to parsing the whole file
  for (const bool whole_file : {false, true}) {
    std::string text = line;
    if (whole_file) {
      is.clear();
      is.seekg(0);
      text.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    }
    try {
      json j = json::parse(text);
      if (j.is_object() && j.contains("config_hash")) return j["config_hash"];
      break;
    } catch (const json::exception&) {
    }
  }
  return "";
}

// ---------------------------------------------------------------- runs

namespace {

struct EvalSets {
  Tensor x;
  std::vector<int> y;
};

EvalSets eval_subset(const Dataset& ds, const ExperimentConfig& cfg) {
  std::vector<int> idx =
      balanced_subset(ds.test_y, ds.class_count, cfg.eval.subset / ds.class_count,
                      substream_seed(cfg.seed, "eval-subset"));
  return {take_rows(ds.test_x, idx), take_labels(ds.test_y, idx)};
}

struct KernelSubset {
  Tensor x;
  std::vector<int> y;
  std::vector<int> ids;
};

KernelSubset kernel_subset(const Dataset& ds, const ExperimentConfig& cfg,
                           uint64_t seed) {
  KernelSubset ks;
  ks.ids = balanced_subset(ds.train_y, ds.class_count,
                           cfg.kernels.subset / ds.class_count,
                           substream_seed(seed, "subset"));
  ks.x = take_rows(ds.train_x, ks.ids);
  ks.y = take_labels(ds.train_y, ks.ids);
  return ks;
}

std::pair<double, double> accuracies(const DynamicsModel& m, const EvalSets& ev,
                                     const ExperimentConfig& cfg, uint64_t seed,
                                     const std::string& tag) {
  const double ben = benign_accuracy(m, ev.x, ev.y);
  const double adv = adversarial_accuracy(m, ev.x, ev.y, cfg.eval.pgd,
                                          substream_seed(seed, "pgd/eval/" + tag));
  return {ben, adv};
}

DynamicsModel stage2_model(const ExperimentConfig& cfg,
                           std::shared_ptr<const ModelSnapshot> parent,
                           const std::string& dynamics, const std::string& bn_policy,
                           bool bn_ablation) {
  const BnPolicy pol = bn_policy == "frozen" ? BnPolicy::frozen : BnPolicy::standard;
  const DynKind kind = dyn_kind_from_name(dynamics);
  if (kind == DynKind::standard) {
    DynamicsModel m =
        make_standard(parent->arch, parent->params, parent->bn_stats, pol,
                      precision_of(cfg));
    return m;
  }
  return spawn(kind, std::move(parent), pol, precision_of(cfg), bn_ablation);
}

}  // namespace

RunPaths run_two_stage(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string hash = config_hash(cfg);
  RunPaths rp;
  rp.dir = cfg.out_dir;
  std::filesystem::create_directories(rp.dir);
  {
    std::ofstream os(rp.dir / "config.json", std::ios::binary);
    os << config_to_json(cfg);
  }
  {
    json manifest = {{"config_hash", hash}, {"seed", cfg.seed}};
    std::ofstream os(rp.dir / "manifest.json", std::ios::binary);
    os << manifest.dump(2) << '\n';
  }

  Dataset ds = build_dataset(cfg.dataset, substream_seed(cfg.seed, "data"));
  const Architecture arch = make_architecture(cfg, ds);
  auto [params, stats] = init_params(arch, substream_seed(cfg.seed, "init"));
  DynamicsModel model = make_standard(arch, std::move(params), std::move(stats),
                                      BnPolicy::standard, precision_of(cfg));

  KernelSubset ks = kernel_subset(ds, cfg, cfg.seed);
  const EvalSets ev = eval_subset(ds, cfg);
  std::set<int> sched(cfg.kernels.epochs.begin(), cfg.kernels.epochs.end());

  auto parent = std::make_shared<ModelSnapshot>();
  bool have_parent = false;

  auto stage1_emit = [&](int epoch, DynamicsModel& m) {
    if (sched.count(epoch)) {
      ModelSnapshot snap = feature_snapshot(m, epoch, cfg.stage1.regime);
      const auto sp = rp.dir / ("stage1_epoch" + std::to_string(epoch) + ".ntksnap");
      save_snapshot(sp, snap, hash);
      ClassKernel k =
          compute_ntk(snap, ks.x, KernelScope::diagonal_only, ks.ids, epoch);
      const auto kp = rp.dir / ("stage1_epoch" + std::to_string(epoch) + ".ntkk");
      save_kernel(kp, k, hash);
      rp.stage1_kernels.emplace_back(epoch, kp);
    }
    if (epoch == cfg.stage2.spawn_epoch && !have_parent) {
      *parent = feature_snapshot(m, epoch, cfg.stage1.regime);
      have_parent = true;
    }
  };

  stage1_emit(0, model);
  train_stage(model, ds.train_x, ds.train_y, cfg.stage1.regime, cfg.stage1.t_switch,
              cfg.stage1.epochs, cfg.stage1.lr, cfg.stage1.momentum,
              cfg.stage1.batch_size, cfg.train_pgd, cfg.seed, "stage1", 0,
              stage1_emit);
  if (!have_parent) throw std::logic_error("run_two_stage: spawn snapshot not captured");

  rp.spawn_snapshot = rp.dir / "spawn.ntksnap";
  save_snapshot(rp.spawn_snapshot, *parent, hash);

  CsvWriter acc(rp.dir / "accuracy.csv", hash,
                {"stage", "epoch", "acc_benign", "acc_adv"});
  {
    auto [b1, a1] = accuracies(model, ev, cfg, cfg.seed, "stage1-final");
    acc.row({"1", std::to_string(cfg.stage1.epochs), g17(b1), g17(a1)});
  }

  DynamicsModel m2 = stage2_model(cfg, parent, cfg.stage2.dynamics,
                                  cfg.stage2.bn_policy, cfg.stage2.bn_ablation);

  const bool track_relmag = m2.kind == DynKind::linearized;
  std::unique_ptr<CsvWriter> relmag;
  if (track_relmag) {
    rp.relmag_csv = rp.dir / "relative_magnitude.csv";
    relmag = std::make_unique<CsvWriter>(rp.relmag_csv, hash,
                                         std::vector<std::string>{"epoch", "value"});
    relmag->row({"0", g17(relative_magnitude(m2, ev.x))});
  }
  auto stage2_hook = [&](int epoch, DynamicsModel& m) {
    if (relmag) relmag->row({std::to_string(epoch), g17(relative_magnitude(m, ev.x))});
  };
  train_stage(m2, ds.train_x, ds.train_y, cfg.stage2.regime, cfg.stage2.t_switch,
              cfg.stage2.epochs, cfg.stage2.lr, cfg.stage2.momentum,
              cfg.stage2.batch_size, cfg.train_pgd, cfg.seed, "stage2", 0,
              stage2_hook);
  if (relmag) relmag->close();

  {
    auto [b2, a2] = accuracies(m2, ev, cfg, cfg.seed, "stage2-final");
    acc.row({"2", std::to_string(cfg.stage2.epochs), g17(b2), g17(a2)});
  }
  acc.close();
  rp.accuracy_csv = rp.dir / "accuracy.csv";

  {
    ModelSnapshot fin = feature_snapshot(m2, cfg.stage2.epochs, cfg.stage2.dynamics);
    rp.final_snapshot = rp.dir / "stage2_final.ntksnap";
    save_snapshot(rp.final_snapshot, fin, hash);
    ClassKernel kf = compute_ntk(fin, ks.x, KernelScope::diagonal_only, ks.ids,
                                 cfg.stage2.epochs);
    const auto kp = rp.dir / "stage2_final.ntkk";
    save_kernel(kp, kf, hash);
    rp.stage2_kernels.emplace_back(cfg.stage2.epochs, kp);
  }
  return rp;
}

std::filesystem::path run_metric_sweep(const ExperimentConfig& cfg, int repeats,
                                       std::vector<uint64_t> seeds) {
  cfg.validate();
  if (repeats < 1) throw std::invalid_argument("metric sweep: repeats must be >= 1");
  if (cfg.kernels.epochs.empty())
    throw std::invalid_argument("metric sweep: empty kernel schedule");
  if (seeds.empty()) {
    for (int r = 0; r < repeats; ++r)
      seeds.push_back(substream_seed(cfg.seed, "repeat-" + std::to_string(r)));
  }
  if (static_cast<int>(seeds.size()) != repeats)
    throw std::invalid_argument("metric sweep: seed count mismatch");

  const std::string hash = config_hash(cfg);
  std::filesystem::create_directories(cfg.out_dir);

  // metric -> epoch -> per-repeat values
  std::map<std::string, std::map<int, std::vector<double>>> table;

  for (int r = 0; r < repeats; ++r) {
    ExperimentConfig sub = cfg;
    sub.seed = seeds[static_cast<size_t>(r)];
    sub.out_dir =
        (std::filesystem::path(cfg.out_dir) / ("rep" + std::to_string(r))).string();
    RunPaths rp = run_two_stage(sub);

    Dataset ds = build_dataset(sub.dataset, substream_seed(sub.seed, "data"));
    KernelSubset ks = kernel_subset(ds, sub, sub.seed);

    std::vector<std::pair<int, Eigen::MatrixXd>> trace;
    std::vector<std::pair<int, ClassKernel>> kernels;
    for (const auto& [epoch, path] : rp.stage1_kernels) {
      ClassKernel k = load_kernel(path);
      trace.emplace_back(epoch, trace_kernel(k));
      kernels.emplace_back(epoch, std::move(k));
    }
    if (trace.size() >= 2)
      for (const auto& [e, v] : kernel_velocity(trace)) table["velocity"][e].push_back(v);
    for (const auto& [e, v] : distance_to_final(trace))
      table["distance_to_final"][e].push_back(v);
    for (const auto& [e, kbar] : trace)
      table["effective_rank"][e].push_back(effective_rank(kbar));
    for (const auto& [e, k] : kernels)
      table["mean_ksm"][e].push_back(mean_ksm(ksm(k, ks.y)));
  }

  const auto out = std::filesystem::path(cfg.out_dir) / "metrics.csv";
  CsvWriter csv(out, hash, {"metric", "epoch", "value", "std"});
  for (const auto& [metric, per_epoch] : table)
    for (const auto& [epoch, vals] : per_epoch) {
      double mean = 0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double sd = 0;
      if (vals.size() > 1) {
        for (double v : vals) sd += (v - mean) * (v - mean);
        sd = std::sqrt(sd / static_cast<double>(vals.size() - 1));
      }
      csv.row({metric, std::to_string(epoch), g17(mean), g17(sd)});
    }
  csv.close();
  return out;
}

std::filesystem::path run_fixed_kernel_adv(const ExperimentConfig& cfg,
                                           const std::vector<std::string>& bases) {
  cfg.validate();
  if (bases.empty()) throw std::invalid_argument("fixed-kernel: no bases requested");
  const std::string hash = config_hash(cfg);
  std::filesystem::create_directories(cfg.out_dir);

  Dataset ds = build_dataset(cfg.dataset, substream_seed(cfg.seed, "data"));
  const Architecture arch = make_architecture(cfg, ds);
  const EvalSets ev = eval_subset(ds, cfg);

  auto make_parent = [&](const std::string& base) {
    auto [params, stats] = init_params(arch, substream_seed(cfg.seed, "init"));
    DynamicsModel m = make_standard(arch, std::move(params), std::move(stats),
                                    BnPolicy::standard, precision_of(cfg));
    if (base == "init") return feature_snapshot(m, 0, "init");
    std::string regime;
    if (base == "benign_final") regime = "benign";
    else if (base == "adv_final") regime = "adversarial";
    else throw std::invalid_argument("fixed-kernel: unknown base " + base);
    train_stage(m, ds.train_x, ds.train_y, regime, 0, cfg.stage1.epochs, cfg.stage1.lr,
                cfg.stage1.momentum, cfg.stage1.batch_size, cfg.train_pgd, cfg.seed,
                "base/" + base, 0);
    return feature_snapshot(m, cfg.stage1.epochs, base);
  };

  const auto out = std::filesystem::path(cfg.out_dir) / "fixed_kernel.csv";
  CsvWriter csv(out, hash, {"base", "regime", "acc_benign", "acc_adv"});
  for (const std::string& base : bases) {
    auto parent = std::make_shared<ModelSnapshot>(make_parent(base));
    for (const std::string& regime : {"benign", "adversarial"}) {
      DynamicsModel m = spawn(DynKind::centered, parent, BnPolicy::frozen,
                              precision_of(cfg));
      train_stage(m, ds.train_x, ds.train_y, regime, 0, cfg.stage2.epochs,
                  cfg.stage2.lr, cfg.stage2.momentum, cfg.stage2.batch_size,
                  cfg.train_pgd, cfg.seed, "fixed/" + base + "/" + regime, 0);
      auto [ben, adv] = accuracies(m, ev, cfg, cfg.seed, base + "/" + regime);
      csv.row({base, regime, g17(ben), g17(adv)});
    }
  }
  csv.close();
  return out;
}

std::filesystem::path run_sgd_ablation(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string hash = config_hash(cfg);
  std::filesystem::create_directories(cfg.out_dir);

  Dataset ds = build_dataset(cfg.dataset, substream_seed(cfg.seed, "data"));
  const Architecture arch = make_architecture(cfg, ds);
  const EvalSets ev = eval_subset(ds, cfg);
  KernelSubset ks = kernel_subset(ds, cfg, cfg.seed);

  auto [params, stats] = init_params(arch, substream_seed(cfg.seed, "init"));
  DynamicsModel m1 = make_standard(arch, std::move(params), std::move(stats),
                                   BnPolicy::standard, precision_of(cfg));
  train_stage(m1, ds.train_x, ds.train_y, cfg.stage1.regime, cfg.stage1.t_switch,
              cfg.stage1.epochs, cfg.stage1.lr, cfg.stage1.momentum,
              cfg.stage1.batch_size, cfg.train_pgd, cfg.seed, "stage1", 0);
  auto parent = std::make_shared<ModelSnapshot>(
      feature_snapshot(m1, cfg.stage1.epochs, cfg.stage1.regime));
  const ClassKernel k_parent =
      compute_ntk(*parent, ks.x, KernelScope::diagonal_only, ks.ids,
                  cfg.stage1.epochs);
  const Eigen::MatrixXd kbar_parent = trace_kernel(k_parent);

  struct Cell {
    std::string method;
    double lr;
  };
  const std::vector<Cell> cells = {
      {"centered", cfg.stage2.lr}, {"sgd", 1e-4}, {"sgd", 1e-2}};

  const auto out = std::filesystem::path(cfg.out_dir) / "sgd_ablation.csv";
  CsvWriter csv(out, hash,
                {"method", "lr", "bn", "acc_benign", "acc_adv", "kernel_distance"});
  for (const Cell& cell : cells)
    for (const std::string& bn : {"frozen", "standard"}) {
      DynamicsModel m =
          stage2_model(cfg, parent, cell.method == "centered" ? "centered" : "standard",
                       bn, /*bn_ablation=*/bn == "standard");
      train_stage(m, ds.train_x, ds.train_y, cfg.stage2.regime, cfg.stage2.t_switch,
                  cfg.stage2.epochs, cell.lr, cfg.stage2.momentum,
                  cfg.stage2.batch_size, cfg.train_pgd, cfg.seed,
                  "ablate/" + cell.method + "/" + g17(cell.lr) + "/" + bn, 0);
      ModelSnapshot fin = feature_snapshot(m, cfg.stage2.epochs, cell.method);
      ClassKernel kf = compute_ntk(fin, ks.x, KernelScope::diagonal_only, ks.ids,
                                   cfg.stage2.epochs);
      const double dist = kernel_distance(trace_kernel(kf), kbar_parent);
      auto [ben, adv] = accuracies(m, ev, cfg, cfg.seed, cell.method + "/" + bn);
      csv.row({cell.method, g17(cell.lr), bn, g17(ben), g17(adv), g17(dist)});
    }
  csv.close();
  return out;
}

namespace {

std::vector<std::filesystem::path> run_artifacts(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".csv" || ext == ".ntkk" || ext == ".ntksnap" || ext == ".advb" ||
        ext == ".json" || ext == ".ppm" || ext == ".pgm")
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string artifact_hash_or_empty(const std::filesystem::path& f) {
  const std::string ext = f.extension().string();
  if (ext == ".ppm" || ext == ".pgm") return "";  // image headers carry no hash
  if (ext == ".json") {
    std::ifstream is(f, std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    try {
      json j = json::parse(text);
      if (j.is_object() && j.contains("config_hash")) return j["config_hash"];
    } catch (const json::exception&) {
    }
    return "";
  }
  return read_artifact_hash(f);
}

}  // namespace

std::filesystem::path emit_plots_data(const std::filesystem::path& run_dir) {
  const auto plots = run_dir / "plots";
  std::filesystem::create_directories(plots);
  std::string hash;
  json index = json::array();
  for (const auto& f : run_artifacts(run_dir)) {
    if (f.extension() != ".csv") continue;
    if (f.parent_path() == plots) continue;
    const std::string h = artifact_hash_or_empty(f);
    if (!h.empty()) {
      if (hash.empty()) hash = h;
      else if (hash != h)
        throw std::runtime_error("emit_plots_data: mixed config hashes in " +
                                 run_dir.string());
    }
    std::filesystem::copy_file(f, plots / f.filename(),
                               std::filesystem::copy_options::overwrite_existing);
    index.push_back(f.filename().string());
  }
  json manifest = {{"config_hash", hash}, {"panels", index}};
  const auto mf = plots / "manifest.json";
  std::ofstream os(mf, std::ios::binary);
  os << manifest.dump(2) << '\n';
  return mf;
}

void export_run(const std::filesystem::path& run_dir,
                const std::filesystem::path& out_file) {
  const auto files = run_artifacts(run_dir);
  if (files.empty()) throw std::runtime_error("export: no artifacts in " + run_dir.string());
  std::string hash;
  json idx = json::array();
  std::vector<std::pair<std::filesystem::path, uint64_t>> sized;
  for (const auto& f : files) {
    const std::string h = artifact_hash_or_empty(f);
    if (!h.empty()) {
      if (hash.empty()) hash = h;
      else if (hash != h)
        throw std::runtime_error("export: refusing to mix config hashes (" + hash +
                                 " vs " + h + " in " + f.string() + ")");
    }
    const uint64_t size = std::filesystem::file_size(f);
    sized.emplace_back(f, size);
    idx.push_back({{"name", std::filesystem::relative(f, run_dir).generic_string()},
                   {"size", size}});
  }
  json header = {{"magic", "ntkexport"}, {"version", 1}, {"config_hash", hash},
                 {"files", idx}};
  std::ofstream os(out_file, std::ios::binary);
  if (!os) throw std::runtime_error("export: cannot open " + out_file.string());
  os << header.dump() << '\n';
  for (const auto& [f, size] : sized) {
    std::ifstream is(f, std::ios::binary);
    os << is.rdbuf();
  }
  if (!os) throw std::runtime_error("export: write failed");
}

}  // namespace ntk
