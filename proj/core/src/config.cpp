#include "agd/config.hpp"

#include <algorithm>
#include <set>

#include "agd/common.hpp"

namespace agd {

namespace {

// Reads fields of one JSON object; any key left unread is an error.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), ErrorKind::Config, "config: '" + path_ + "' must be an object");
  }

  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      require(seen_.count(key) != 0, ErrorKind::Config,
              "config: unknown key '" + child(key) + "'");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), child(key));
  }

  const Json* object(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  static T convert(const Json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      require(v.is_boolean(), ErrorKind::Config, "config: '" + path + "' must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0),
              ErrorKind::Config, "config: '" + path + "' must be a non-negative integer");
      return static_cast<T>(v.get<unsigned long long>());
    } else if constexpr (std::is_floating_point_v<T>) {
      require(v.is_number(), ErrorKind::Config, "config: '" + path + "' must be a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      require(v.is_string(), ErrorKind::Config, "config: '" + path + "' must be a string");
      return v.get<std::string>();
    } else {
      require(v.is_array(), ErrorKind::Config, "config: '" + path + "' must be an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

AttackConfig parse_attack(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  std::string kind;
  require(r.has("kind"), ErrorKind::Config, "config: '" + r.child("kind") + "' is required");
  r.read("kind", kind);
  AttackConfig a;
  try {
    a.kind = parse_attack_kind(kind);
  } catch (const Error& e) {
    fail(ErrorKind::Config, "config: '" + r.child("kind") + "': " + e.what());
  }
  require(a.kind != AttackKind::AdaptivePgd, ErrorKind::Config,
          "config: adaptive attacks are configured under 'whitebox'");
  r.read("epsilon", a.epsilon);
  r.read("step_size", a.step_size);
  r.read("steps", a.steps);
  r.read("init_trials", a.init_trials);
  r.read("orthogonal_step", a.orthogonal_step);
  r.read("contraction_step", a.contraction_step);
  return a;
}

Json attack_json(const AttackConfig& a) {
  Json j = {{"kind", to_string(a.kind)},
            {"epsilon", a.epsilon},
            {"step_size", a.step_size},
            {"steps", a.steps}};
  if (a.kind == AttackKind::Boundary) {
    j["init_trials"] = a.init_trials;
    j["orthogonal_step"] = a.orthogonal_step;
    j["contraction_step"] = a.contraction_step;
  }
  return j;
}

std::uint64_t split_seed(const RunConfig& c) { return derive_seed(c.seed, stream_id("split")); }

}  // namespace

std::vector<std::string> experiment_names() {
  return {"detection", "separation", "k",        "transforms", "layers",
          "grid",      "ablation",   "whitebox", "consistency"};
}

RunConfig default_run_config() {
  RunConfig c;
  AttackConfig fgsm_cfg;
  fgsm_cfg.kind = AttackKind::Fgsm;
  fgsm_cfg.epsilon = 0.1;
  AttackConfig pgd_cfg;
  pgd_cfg.kind = AttackKind::Pgd;
  pgd_cfg.epsilon = 0.1;
  pgd_cfg.step_size = 0.01;
  pgd_cfg.steps = 20;
  AttackConfig boundary_cfg;
  boundary_cfg.kind = AttackKind::Boundary;
  boundary_cfg.steps = 200;
  c.experiment.attacks = {fgsm_cfg, pgd_cfg, boundary_cfg};
  apply_master_seed(c, c.seed);
  return c;
}

void apply_master_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.dataset.synthetic.seed = derive_seed(seed, stream_id("synthetic"));
  c.train.seed = derive_seed(seed, stream_id("train"));
  for (std::size_t i = 0; i < c.experiment.attacks.size(); ++i) {
    c.experiment.attacks[i].seed = derive_seed(seed, stream_id("attack"), i);
  }
  c.experiment.adaptive.seed = derive_seed(seed, stream_id("adaptive"));
  c.experiment.forest.seed = derive_seed(seed, stream_id("forest"));
  c.experiment.agd.perturbation.seed = 0;
  c.experiment.seed = derive_seed(seed, stream_id("experiment"));
}

RunConfig parse_run_config(const Json& doc) {
  RunConfig c = default_run_config();
  ObjectReader root(doc, "");
  root.read("seed", c.seed);
  std::string out_dir = c.output_dir.string();
  root.read("output_dir", out_dir);
  c.output_dir = out_dir;
  root.read("jobs", c.experiment.jobs);
  root.read("experiments", c.experiments);

  if (const Json* d = root.object("dataset")) {
    ObjectReader r(*d, "dataset");
    r.read("source", c.dataset.kind);
    auto& s = c.dataset.synthetic;
    r.read("classes", s.classes);
    r.read("per_class", s.per_class);
    r.read("noise", s.noise);
    r.read("contrast", s.contrast);
    r.read("channels", s.channels);
    r.read("height", s.height);
    r.read("width", s.width);
    std::string images, labels;
    r.read("images", images);
    r.read("labels", labels);
    c.dataset.images = images;
    c.dataset.labels = labels;
    require(c.dataset.kind == "synthetic" || c.dataset.kind == "idx", ErrorKind::Config,
            "config: 'dataset.source' must be \"synthetic\" or \"idx\"");
    if (c.dataset.kind == "idx") {
      require(!images.empty() && !labels.empty(), ErrorKind::Config,
              "config: idx datasets need 'dataset.images' and 'dataset.labels'");
    }
  }
  if (const Json* s = root.object("splits")) {
    ObjectReader r(*s, "splits");
    r.read("model_train", c.fractions.model_train);
    r.read("reference", c.fractions.reference);
    r.read("detector_train", c.fractions.detector_train);
    r.read("eval", c.fractions.eval);
  }
  if (const Json* m = root.object("model")) {
    ObjectReader r(*m, "model");
    std::string arch = to_string(c.model.architecture);
    r.read("architecture", arch);
    try {
      c.model.architecture = parse_architecture(arch);
    } catch (const Error& e) {
      fail(ErrorKind::Config, std::string("config: 'model.architecture': ") + e.what());
    }
    r.read("hidden_width", c.model.hidden_width);
    r.read("tap_layers", c.model.tap_layers);
  }
  if (const Json* t = root.object("train")) {
    ObjectReader r(*t, "train");
    r.read("learning_rate", c.train.learning_rate);
    r.read("momentum", c.train.momentum);
    r.read("epochs", c.train.epochs);
    r.read("batch_size", c.train.batch_size);
    r.read("holdout_fraction", c.train.holdout_fraction);
    r.read("min_test_accuracy", c.train.min_test_accuracy);
  }
  if (const Json* a = root.object("attacks")) {
    require(a->is_array() && !a->empty(), ErrorKind::Config,
            "config: 'attacks' must be a non-empty array");
    c.experiment.attacks.clear();
    for (std::size_t i = 0; i < a->size(); ++i) {
      c.experiment.attacks.push_back(parse_attack((*a)[i], "attacks[" + std::to_string(i) + "]"));
    }
  }
  auto& agd = c.experiment.agd;
  if (const Json* g = root.object("agd")) {
    ObjectReader r(*g, "agd");
    r.read("k", agd.k);
    r.read("step", agd.step);
    r.read("layers", agd.layers);
    r.read("pixel_count", agd.perturbation.pixel_count);
    r.read("magnitude", agd.perturbation.magnitude);
    std::string policy = "error";
    r.read("empty_class", policy);
    require(policy == "error" || policy == "global-nearest", ErrorKind::Config,
            "config: 'agd.empty_class' must be \"error\" or \"global-nearest\"");
    agd.empty_class = policy == "error" ? EmptyClassPolicy::Error : EmptyClassPolicy::GlobalNearest;
  }
  auto& forest = c.experiment.forest;
  if (const Json* f = root.object("detector")) {
    ObjectReader r(*f, "detector");
    r.read("tree_count", forest.tree_count);
    r.read("max_depth", forest.max_depth);
    r.read("min_samples_leaf", forest.min_samples_leaf);
    r.read("feature_subsample", forest.feature_subsample);
    r.read("bootstrap", forest.bootstrap);
  }
  if (const Json* b = root.object("baselines")) {
    ObjectReader r(*b, "baselines");
    r.read("layer", c.experiment.baseline_layer);
    r.read("rand1_sigmas", c.experiment.rand1_sigmas);
  }
  if (const Json* s = root.object("sweeps")) {
    ObjectReader r(*s, "sweeps");
    r.read("k_values", c.experiment.k_values);
    r.read("transform_counts", c.experiment.transform_counts);
    r.read("mu_values", c.experiment.mu_values);
    r.read("step_values", c.experiment.step_values);
    r.read("viz_transforms", c.experiment.viz_transforms);
  }
  if (const Json* w = root.object("whitebox")) {
    ObjectReader r(*w, "whitebox");
    auto& a = c.experiment.adaptive;
    r.read("epsilon", a.epsilon);
    r.read("step_size", a.step_size);
    r.read("steps", a.steps);
    r.read("lambda", a.lambda);
    r.read("examples", c.experiment.whitebox_examples);
  }

  const auto names = experiment_names();
  for (const auto& e : c.experiments) {
    require(std::find(names.begin(), names.end(), e) != names.end(), ErrorKind::Config,
            "config: unknown experiment '" + e + "'");
  }
  c.model.class_count = c.dataset.synthetic.classes;
  c.model.input_shape = {c.dataset.synthetic.channels, c.dataset.synthetic.height,
                         c.dataset.synthetic.width};
  apply_master_seed(c, c.seed);
  validate(c.fractions);
  for (const auto& a : c.experiment.attacks) validate(a);
  validate(c.experiment.adaptive);
  validate(forest);
  validate(agd.perturbation);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = read_json_file(path);
  } catch (const Error& e) {
    // A config that cannot be read is a config problem, not a data one.
    fail(ErrorKind::Config, e.what());
  }
  return parse_run_config(doc);
}

Json run_config_to_json(const RunConfig& c) {
  const auto& e = c.experiment;
  Json dataset = {{"source", c.dataset.kind}};
  if (c.dataset.kind == "idx") {
    dataset["images"] = c.dataset.images.string();
    dataset["labels"] = c.dataset.labels.string();
  } else {
    const auto& s = c.dataset.synthetic;
    dataset.update({{"classes", s.classes},
                    {"per_class", s.per_class},
                    {"noise", s.noise},
                    {"contrast", s.contrast},
                    {"channels", s.channels},
                    {"height", s.height},
                    {"width", s.width}});
  }
  Json attacks = Json::array();
  for (const auto& a : e.attacks) attacks.push_back(attack_json(a));
  return {{"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"jobs", e.jobs},
          {"experiments", c.experiments},
          {"dataset", dataset},
          {"splits",
           {{"model_train", c.fractions.model_train},
            {"reference", c.fractions.reference},
            {"detector_train", c.fractions.detector_train},
            {"eval", c.fractions.eval}}},
          {"model",
           {{"architecture", to_string(c.model.architecture)},
            {"hidden_width", c.model.hidden_width},
            {"tap_layers", c.model.tap_layers}}},
          {"train",
           {{"learning_rate", c.train.learning_rate},
            {"momentum", c.train.momentum},
            {"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"holdout_fraction", c.train.holdout_fraction},
            {"min_test_accuracy", c.train.min_test_accuracy}}},
          {"attacks", attacks},
          {"agd",
           {{"k", e.agd.k},
            {"step", e.agd.step},
            {"layers", e.agd.layers},
            {"pixel_count", e.agd.perturbation.pixel_count},
            {"magnitude", e.agd.perturbation.magnitude},
            {"empty_class", e.agd.empty_class == EmptyClassPolicy::Error ? "error" : "global-nearest"}}},
          {"detector",
           {{"tree_count", e.forest.tree_count},
            {"max_depth", e.forest.max_depth},
            {"min_samples_leaf", e.forest.min_samples_leaf},
            {"feature_subsample", e.forest.feature_subsample},
            {"bootstrap", e.forest.bootstrap}}},
          {"baselines", {{"layer", e.baseline_layer}, {"rand1_sigmas", e.rand1_sigmas}}},
          {"sweeps",
           {{"k_values", e.k_values},
            {"transform_counts", e.transform_counts},
            {"mu_values", e.mu_values},
            {"step_values", e.step_values},
            {"viz_transforms", e.viz_transforms}}},
          {"whitebox",
           {{"epsilon", e.adaptive.epsilon},
            {"step_size", e.adaptive.step_size},
            {"steps", e.adaptive.steps},
            {"lambda", e.adaptive.lambda},
            {"examples", e.whitebox_examples}}}};
}

LabeledSet load_dataset(const DatasetSource& source) {
  if (source.kind == "idx") return load_idx(source.images, source.labels);
  return synth_generate(source.synthetic);
}

DataSplits prepare_splits(const RunConfig& config) {
  return split(load_dataset(config.dataset), config.fractions, split_seed(config));
}

void save_paired_set(const PairedSet& set, const AttackConfig& attack, SplitTag split,
                     const std::filesystem::path& dir) {
  std::vector<double> benign, adversarial;
  Json examples = Json::array();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& b = set.benign[i].values();
    const auto& a = set.adversarial[i].values();
    benign.insert(benign.end(), b.begin(), b.end());
    adversarial.insert(adversarial.end(), a.begin(), a.end());
    const auto& r = set.results[i];
    examples.push_back({{"id", set.ids[i]},
                        {"label", set.labels[i]},
                        {"success", r.success},
                        {"iterations", r.iterations},
                        {"queries", r.queries},
                        {"linf_distance", r.linf_distance},
                        {"l2_distance", r.l2_distance}});
  }
  Json attack_doc = attack_json(attack);
  attack_doc["seed"] = attack.seed;
  Json meta = {{"format_version", 1},
               {"split", to_string(split)},
               {"attack", attack_doc},
               {"image_shape", set.size() ? set.benign.front().shape() : Shape{}},
               {"considered", set.considered},
               {"attacked", set.attacked},
               {"success_rate", set.success_rate()},
               {"examples", examples}};
  std::filesystem::create_directories(dir);
  write_f64_raw(dir / "benign.f64", benign);
  write_f64_raw(dir / "adversarial.f64", adversarial);
  write_json_file(dir / "meta.json", meta);
}

PairedSet load_paired_set(const std::filesystem::path& dir) {
  const Json meta = read_json_file(dir / "meta.json");
  PairedSet out;
  try {
    require(meta.at("format_version").get<int>() == 1, ErrorKind::Data,
            "adversarial set " + dir.string() + ": unsupported format_version");
    const Shape shape = meta.at("image_shape").get<Shape>();
    out.considered = meta.at("considered").get<std::size_t>();
    out.attacked = meta.at("attacked").get<std::size_t>();
    const auto benign = read_f64_raw(dir / "benign.f64");
    const auto adversarial = read_f64_raw(dir / "adversarial.f64");
    const auto& examples = meta.at("examples");
    const std::size_t n = element_count(shape);
    require(benign.size() == examples.size() * n && adversarial.size() == benign.size(),
            ErrorKind::Data, "adversarial set " + dir.string() + ": tensor data size mismatch");
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto& e = examples[i];
      out.ids.push_back(e.at("id").get<std::size_t>());
      out.labels.push_back(e.at("label").get<std::size_t>());
      auto first = benign.begin() + static_cast<std::ptrdiff_t>(i * n);
      out.benign.emplace_back(shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
      auto afirst = adversarial.begin() + static_cast<std::ptrdiff_t>(i * n);
      AttackResult r;
      r.adversarial = Tensor(shape, std::vector<double>(afirst, afirst + static_cast<std::ptrdiff_t>(n)));
      r.success = e.at("success").get<bool>();
      r.iterations = e.at("iterations").get<std::size_t>();
      r.queries = e.at("queries").get<std::size_t>();
      r.linf_distance = e.at("linf_distance").get<double>();
      r.l2_distance = e.at("l2_distance").get<double>();
      out.adversarial.push_back(r.adversarial);
      out.results.push_back(std::move(r));
    }
  } catch (const Json::exception& e) {
    fail(ErrorKind::Data, "adversarial set " + dir.string() + ": malformed metadata (" + e.what() + ")");
  }
  return out;
}

}  // namespace agd
