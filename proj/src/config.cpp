#include "selfboost/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace selfboost {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

/// Reads one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected a JSON object");
  }

  std::string key(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }

  template <typename T>
  void get(const std::string& name, T& out) {
    seen_.insert(name);
    auto it = node_.find(name);
    if (it == node_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw ConfigError(key(name), "expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ConfigError(key(name), "expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(key(name), "expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError(key(name), "expected a string");
      }
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(key(name), std::string("bad value: ") + e.what());
    }
  }

  template <typename T>
  void get_optional(const std::string& name, std::optional<T>& out) {
    seen_.insert(name);
    auto it = node_.find(name);
    if (it == node_.end() || it->is_null()) return;
    T value{};
    get(name, value);
    out = value;
  }

  std::optional<Section> child(const std::string& name) {
    seen_.insert(name);
    auto it = node_.find(name);
    if (it == node_.end()) return std::nullopt;
    return Section(*it, key(name));
  }

  void reject_unknown() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key(it.key()), "unknown config key '" + key(it.key()) + "'");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void as_config_error(const std::string& key, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key, e.what());
  }
}

/// Field-level checks so errors name the offending key.
void validate_train_keys(const TrainConfig& t) {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  require(t.alpha >= 0.0 && t.alpha <= 1.0, "train.alpha", "alpha must lie in [0, 1]");
  require(t.tau > 0.0, "train.tau", "tau must be positive");
  require(t.lr_s > 0.0, "train.lr_s", "lr_s must be positive");
  require(t.lr_g > 0.0, "train.lr_g", "lr_g must be positive");
  require(!t.zeta || *t.zeta > 0.0, "train.zeta", "zeta must be positive");
  require(t.meta_period >= 1, "train.meta_period", "meta_period must be >= 1");
  require(t.lr_factor > 0.0, "train.lr_factor", "lr_factor must be positive");
  require(t.momentum >= 0.0 && t.momentum < 1.0, "train.momentum", "momentum must lie in [0, 1)");
  require(t.weight_decay >= 0.0, "train.weight_decay", "weight_decay must be >= 0");
  require(t.batch_size >= 1, "train.batch_size", "batch_size must be >= 1");
  require(!t.meta_steps || *t.meta_steps >= 1, "train.meta_steps", "meta_steps must be >= 1");
  for (std::size_t i = 1; i < t.milestones.size(); ++i) {
    require(t.milestones[i] > t.milestones[i - 1], "train.milestones", "milestones must be strictly increasing");
  }
}

}  // namespace

std::size_t RunConfig::classes() const {
  if (data.kind == "synthetic") return data.classes;
  if (data.kind == "cifar10") return 10;
  if (data.kind == "cifar100") return 100;
  throw ConfigError("data.kind", "unknown dataset kind '" + data.kind + "'");
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec spec = widths.empty() ? ModelSpec::named(backbone, classes()) : ModelSpec{};
  if (!widths.empty()) {
    spec.widths = widths;
    spec.classes = classes();
  }
  if (downsample == "strided_conv") {
    spec.downsample = Downsample::strided_conv;
  } else if (downsample == "avg_pool") {
    spec.downsample = Downsample::avg_pool;
  } else {
    throw ConfigError("model.downsample", "unknown downsample '" + downsample + "'");
  }
  return spec;
}

ModelSpec RunConfig::teacher_spec() const {
  ModelSpec spec = model_spec();
  if (!teacher.widths.empty()) spec.widths = teacher.widths;
  return spec;
}

GeneratorSpec RunConfig::generator_spec() const { return GeneratorSpec{model_spec(), fuse_width}; }

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads", "threads must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir", "output_dir must not be empty");
  as_config_error(widths.empty() ? "model.backbone" : "model.widths", [&] { model_spec().validate(); });
  as_config_error("teacher.widths", [&] { teacher_spec().validate(); });
  validate_train_keys(train);
  as_config_error("train", [&] { train.validate(); });
  if (data.kind == "synthetic") {
    if (data.train_size < data.classes) throw ConfigError("data.train_size", "train_size must be >= classes");
    if (data.test_size < 1) throw ConfigError("data.test_size", "test_size must be >= 1");
    if (data.classes < 2) throw ConfigError("data.classes", "classes must be >= 2");
    const std::size_t factor = std::size_t{1} << model_spec().stages();
    if (data.image_size % factor) {
      throw ConfigError("data.image_size", "image_size must be divisible by 2^stages");
    }
  } else if (data.kind == "cifar10" || data.kind == "cifar100") {
    if (data.train_files.empty()) throw ConfigError("data.train_files", "cifar data needs train_files");
    if (data.test_files.empty()) throw ConfigError("data.test_files", "cifar data needs test_files");
  } else {
    throw ConfigError("data.kind", "unknown dataset kind '" + data.kind + "'");
  }
  if (train.mode == LossMode::classic_kd && teacher.checkpoint.empty()) {
    throw ConfigError("teacher.checkpoint", "classic_kd mode needs a teacher checkpoint");
  }
}

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");
  top.get("output_dir", c.output_dir);
  top.get("threads", c.threads);
  top.get("deterministic", c.deterministic);
  std::string mode(to_string(c.train.mode));
  top.get("mode", mode);
  as_config_error("mode", [&] { c.train.mode = parse_loss_mode(mode); });
  top.get("seed", c.train.seed);

  if (auto m = top.child("model")) {
    m->get("backbone", c.backbone);
    m->get("widths", c.widths);
    m->get("downsample", c.downsample);
    m->get("fuse_width", c.fuse_width);
    m->reject_unknown();
  }
  if (auto d = top.child("data")) {
    d->get("kind", c.data.kind);
    d->get("train_size", c.data.train_size);
    d->get("test_size", c.data.test_size);
    d->get("classes", c.data.classes);
    d->get("image_size", c.data.image_size);
    d->get("seed", c.data.seed);
    d->get("train_files", c.data.train_files);
    d->get("test_files", c.data.test_files);
    d->get("standardize", c.data.standardize);
    d->reject_unknown();
  }
  if (auto t = top.child("train")) {
    TrainConfig& tc = c.train;
    t->get("alpha", tc.alpha);
    t->get("tau", tc.tau);
    t->get("lr_s", tc.lr_s);
    t->get("lr_g", tc.lr_g);
    t->get_optional("zeta", tc.zeta);
    t->get("meta_period", tc.meta_period);
    t->get("epochs", tc.epochs);
    t->get("milestones", tc.milestones);
    t->get("lr_factor", tc.lr_factor);
    t->get("momentum", tc.momentum);
    t->get("weight_decay", tc.weight_decay);
    t->get("batch_size", tc.batch_size);
    std::string order(to_string(tc.meta_order)), objective(to_string(tc.meta_objective));
    t->get("meta_order", order);
    as_config_error(t->key("meta_order"), [&] { tc.meta_order = parse_meta_order(order); });
    t->get("meta_objective", objective);
    as_config_error(t->key("meta_objective"), [&] { tc.meta_objective = parse_meta_objective(objective); });
    t->get_optional("meta_steps", tc.meta_steps);
    t->get("augment", tc.augment);
    t->reject_unknown();
  }
  if (auto t = top.child("teacher")) {
    t->get("checkpoint", c.teacher.checkpoint);
    t->get("widths", c.teacher.widths);
    t->reject_unknown();
  }
  top.reject_unknown();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string dump_run_config(const RunConfig& c) {
  ordered_json j;
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  j["deterministic"] = c.deterministic;
  j["mode"] = std::string(to_string(c.train.mode));
  j["seed"] = c.train.seed;
  j["model"] = {{"backbone", c.backbone},
                {"widths", c.widths},
                {"downsample", c.downsample},
                {"fuse_width", c.fuse_width}};
  j["data"] = {{"kind", c.data.kind},
               {"train_size", c.data.train_size},
               {"test_size", c.data.test_size},
               {"classes", c.data.classes},
               {"image_size", c.data.image_size},
               {"seed", c.data.seed},
               {"train_files", c.data.train_files},
               {"test_files", c.data.test_files},
               {"standardize", c.data.standardize}};
  const TrainConfig& t = c.train;
  ordered_json tj;
  tj["alpha"] = t.alpha;
  tj["tau"] = t.tau;
  tj["lr_s"] = t.lr_s;
  tj["lr_g"] = t.lr_g;
  tj["zeta"] = t.zeta ? ordered_json(*t.zeta) : ordered_json(nullptr);
  tj["meta_period"] = t.meta_period;
  tj["epochs"] = t.epochs;
  tj["milestones"] = t.milestones;
  tj["lr_factor"] = t.lr_factor;
  tj["momentum"] = t.momentum;
  tj["weight_decay"] = t.weight_decay;
  tj["batch_size"] = t.batch_size;
  tj["meta_order"] = std::string(to_string(t.meta_order));
  tj["meta_objective"] = std::string(to_string(t.meta_objective));
  tj["meta_steps"] = t.meta_steps ? ordered_json(*t.meta_steps) : ordered_json(nullptr);
  tj["augment"] = t.augment;
  j["train"] = tj;
  j["teacher"] = {{"checkpoint", c.teacher.checkpoint}, {"widths", c.teacher.widths}};
  return j.dump(2) + "\n";
}

LoadedData load_data(const DataConfig& config) {
  LoadedData out;
  if (config.kind == "synthetic") {
    out.train = synth_dataset(mix_seed(config.seed, 1), config.train_size, config.classes, config.image_size);
    out.test = synth_dataset(mix_seed(config.seed, 2), config.test_size, config.classes, config.image_size);
    out.train.split = "train";
    out.test.split = "test";
  } else {
    const CifarVariant variant = config.kind == "cifar10" ? CifarVariant::cifar10 : CifarVariant::cifar100;
    std::vector<std::filesystem::path> train(config.train_files.begin(), config.train_files.end());
    std::vector<std::filesystem::path> test(config.test_files.begin(), config.test_files.end());
    out.train = load_cifar_binary(train, variant);
    out.test = load_cifar_binary(test, variant);
    out.train.split = "train";
    out.test.split = "test";
  }
  if (config.standardize) {
    const auto stats = compute_standardization(out.train);
    apply_standardization(out.train, stats);
    apply_standardization(out.test, stats);
  }
  return out;
}

}  // namespace selfboost
