#include "occseg/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "occseg/image_io.hpp"

namespace occseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> d = {
      {"seed", "0"},
      {"jobs", "1"},
      {"solver.mu", "1"},
      {"solver.nu", "auto"},
      {"solver.lambda", "auto"},
      {"solver.eps", "0.001"},
      {"solver.max_outer", "100"},
      {"solver.sb_inner", "10"},
      {"solver.gs_sweeps", "2"},
      {"solver.sb_tol", "1e-7"},
      {"solver.threshold", "0.5"},
      {"solver.tv_mode", "isotropic"},
      {"solver.window_step", "1"},
      {"solver.window_radius", "4"},
      {"solver.window_scales", "1"},
      {"solver.mean_field_iters", "5"},
      {"solver.freeze_window", "false"},
      {"solver.reestimate_intensities", "false"},
      {"init.k", "auto"},
      {"init.kmeans_restarts", "5"},
      {"init.kmeans_iters", "100"},
      {"init.seed_region_size", "9"},
      {"init.depth_rule", "brighter_is_nearer"},
      {"init.background", "largest_extremal"},
      {"train.epochs_layer1", "3000"},
      {"train.epochs_layer2", "1000"},
      {"train.epochs_joint", "1000"},
      {"train.learning_rate", "0.05"},
      {"train.lr_decay_epochs", "100"},
      {"train.joint_lr_factor", "0.2"},
      {"train.momentum", "0.5"},
      {"train.weight_decay", "0.0001"},
      {"train.minibatch", "20"},
      {"train.cd_steps", "1"},
      {"train.persistent_chains", "5"},
      {"train.chain_gibbs_steps", "5"},
      {"train.mean_field_iters", "10"},
      {"arch.visible_w", "16"},
      {"arch.visible_h", "16"},
      {"arch.patch_rows", "2"},
      {"arch.patch_cols", "2"},
      {"arch.overlap", "6"},
      {"arch.hidden1_per_patch", "40"},
      {"arch.hidden2", "25"},
      {"data.dataset", "toy:cross,square"},
      {"data.toy_count", "200"},
      {"data.toy_seed", "11"},
      {"data.split_seed", "0"},
      {"data.flip", "false"},
      {"scene.n_objects", "2"},
      {"scene.canvas_w", "28"},
      {"scene.canvas_h", "28"},
      {"scene.sigma", "0.05"},
      {"scene.count", "50"},
      {"scene.known_intensities", "false"},
      {"eval.plain_accuracy", "false"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last)
    throw UsageError("invalid value '" + text + "' for " + key);
  return value;
}

bool is_auto(const std::string& v) { return v == "auto" || v.empty(); }

void echo_config(const RunConfig& cfg, const fs::path& dir) {
  std::ofstream out(dir / "config.txt");
  if (!out) throw DataError("cannot write " + (dir / "config.txt").string());
  cfg.write(out);
}

void make_dir(const fs::path& dir) {
  if (dir.empty()) throw UsageError("an output directory is required (--out)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void load_model_checked(const fs::path& path, SbmArchitecture& arch, SbmParams& params) {
  if (path.empty()) throw UsageError("a trained model is required (--model)");
  load_model(path, arch, params);
}

std::string numbered(const std::string& stem, int i, const std::string& ext) {
  return stem + "_" + std::to_string(i) + ext;
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown configuration key '" + key + "'");
  it->second = trim(value);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown configuration key '" + key + "'");
  return it->second;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> k;
  for (const auto& [key, value] : values_) k.push_back(key);
  return k;
}

void RunConfig::load_text(std::istream& in, const std::string& source) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!has(key))
      throw UsageError(source + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    set(key, line.substr(eq + 1));
  }
}

void RunConfig::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open configuration file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw UsageError(path.string() + ": " + e.what());
    }
    const json& obj = j.contains("config") ? j.at("config") : j;
    if (!obj.is_object()) throw UsageError(path.string() + ": expected a JSON object");
    for (const auto& [key, value] : obj.items()) {
      if (!has(key)) throw UsageError(path.string() + ": unknown key '" + key + "'");
      set(key, value.is_string() ? value.get<std::string>() : value.dump());
    }
    return;
  }
  std::istringstream lines(text);
  load_text(lines, path.string());
}

std::string env_name(const std::string& prefix, const std::string& key) {
  std::string name = prefix;
  for (char c : key)
    name += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

void RunConfig::apply_env(const std::string& prefix) {
  for (auto& [key, value] : values_) {
    if (const char* v = std::getenv(env_name(prefix, key).c_str())) value = trim(v);
  }
}

void RunConfig::apply_profile(const std::string& name) {
  if (name.empty() || name == "default") return;
  if (name != "toy") throw UsageError("unknown profile '" + name + "' (expected toy)");
  const SbmTrainingConfig t = SbmTrainingConfig::toy();
  const SbmArchitecture a = toy_architecture();
  auto num = [](auto v) {
    std::ostringstream s;
    s << v;
    return s.str();
  };
  set("train.epochs_layer1", num(t.epochs_layer1));
  set("train.epochs_layer2", num(t.epochs_layer2));
  set("train.epochs_joint", num(t.epochs_joint));
  set("train.learning_rate", num(t.learning_rate));
  set("train.minibatch", num(t.minibatch));
  set("train.persistent_chains", num(t.persistent_chains));
  set("train.chain_gibbs_steps", num(t.chain_gibbs_steps));
  set("arch.visible_w", num(a.visible_w));
  set("arch.visible_h", num(a.visible_h));
  set("arch.patch_rows", num(a.patch_rows));
  set("arch.patch_cols", num(a.patch_cols));
  set("arch.overlap", num(a.overlap_d));
  set("arch.hidden1_per_patch", num(a.hidden1_per_patch));
  set("arch.hidden2", num(a.hidden2));
  set("solver.mu", "0.03");
}

void RunConfig::write(std::ostream& out) const {
  out << "# occseg effective configuration\n";
  for (const auto& [key, value] : values_) out << key << " = " << value << '\n';
}

json RunConfig::to_json() const {
  json j = json::object();
  for (const auto& [key, value] : values_) j[key] = value;
  return j;
}

int RunConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}

double RunConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  std::string v = get(key);
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw UsageError("invalid boolean '" + get(key) + "' for " + key);
}

SolverConfig RunConfig::solver() const {
  SolverConfig c;
  c.mu = get_double("solver.mu");
  if (!is_auto(get("solver.nu"))) c.nu = get_double("solver.nu");
  if (!is_auto(get("solver.lambda"))) c.lambda = get_double("solver.lambda");
  c.eps = get_double("solver.eps");
  c.max_outer = get_int("solver.max_outer");
  c.sb_inner = get_int("solver.sb_inner");
  c.gs_sweeps = get_int("solver.gs_sweeps");
  c.sb_tol = get_double("solver.sb_tol");
  c.threshold = get_double("solver.threshold");
  const std::string& tv = get("solver.tv_mode");
  if (tv == "isotropic")
    c.tv_mode = TvMode::isotropic;
  else if (tv == "anisotropic")
    c.tv_mode = TvMode::anisotropic;
  else
    throw UsageError("solver.tv_mode must be isotropic or anisotropic, got '" + tv + "'");
  c.window_step = get_int("solver.window_step");
  c.window_radius = get_int("solver.window_radius");
  c.window_scales.clear();
  for (const std::string& s : split(get("solver.window_scales"), ','))
    c.window_scales.push_back(parse_number<double>("solver.window_scales", s));
  c.mean_field_iters = get_int("solver.mean_field_iters");
  c.freeze_window = get_bool("solver.freeze_window");
  c.reestimate_intensities = get_bool("solver.reestimate_intensities");
  c.seed = get_u64("seed");
  try {
    c.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return c;
}

InitConfig RunConfig::init() const {
  InitConfig c;
  if (!is_auto(get("init.k"))) c.k = get_int("init.k");
  c.kmeans_restarts = get_int("init.kmeans_restarts");
  c.kmeans_iters = get_int("init.kmeans_iters");
  c.seed = get_u64("seed");
  c.seed_region_size = get_int("init.seed_region_size");
  const std::string& rule = get("init.depth_rule");
  if (rule == "brighter_is_nearer")
    c.depth_rule = DepthRule::brighter_is_nearer;
  else if (rule == "darker_is_nearer")
    c.depth_rule = DepthRule::darker_is_nearer;
  else
    throw UsageError("init.depth_rule must be brighter_is_nearer or darker_is_nearer");
  const std::string& bg = get("init.background");
  if (bg == "largest_extremal")
    c.background = BackgroundChoice::largest_extremal;
  else if (bg == "darkest")
    c.background = BackgroundChoice::darkest;
  else if (bg == "brightest")
    c.background = BackgroundChoice::brightest;
  else
    throw UsageError("init.background must be largest_extremal, darkest or brightest");
  try {
    c.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return c;
}

SbmTrainingConfig RunConfig::training() const {
  SbmTrainingConfig c;
  c.epochs_layer1 = get_int("train.epochs_layer1");
  c.epochs_layer2 = get_int("train.epochs_layer2");
  c.epochs_joint = get_int("train.epochs_joint");
  c.learning_rate = get_double("train.learning_rate");
  c.lr_decay_epochs = get_double("train.lr_decay_epochs");
  c.joint_lr_factor = get_double("train.joint_lr_factor");
  c.momentum = get_double("train.momentum");
  c.weight_decay = get_double("train.weight_decay");
  c.minibatch = get_int("train.minibatch");
  c.cd_steps = get_int("train.cd_steps");
  c.persistent_chains = get_int("train.persistent_chains");
  c.chain_gibbs_steps = get_int("train.chain_gibbs_steps");
  c.mean_field_iters = get_int("train.mean_field_iters");
  c.seed = get_u64("seed");
  try {
    c.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return c;
}

SbmArchitecture RunConfig::architecture() const {
  try {
    return SbmArchitecture::tiled(get_int("arch.visible_w"), get_int("arch.visible_h"),
                                  get_int("arch.patch_rows"), get_int("arch.patch_cols"),
                                  get_int("arch.overlap"), get_int("arch.hidden1_per_patch"),
                                  get_int("arch.hidden2"));
  } catch (const DataError& e) {
    throw UsageError(std::string("architecture: ") + e.what());
  }
}

ShapeDataset load_shapes(const RunConfig& cfg, int width, int height) {
  const std::string& spec = cfg.get("data.dataset");
  ShapeDataset ds;
  if (spec.rfind("toy:", 0) == 0) {
    const int count = cfg.get_int("data.toy_count");
    const std::uint64_t seed = cfg.get_u64("data.toy_seed");
    std::vector<ShapeDataset> parts;
    std::uint64_t k = 0;
    for (const std::string& kind : split(spec.substr(4), ',')) {
      ToyShape shape;
      if (kind == "cross")
        shape = ToyShape::cross;
      else if (kind == "square")
        shape = ToyShape::square;
      else if (kind == "disk")
        shape = ToyShape::disk;
      else
        throw UsageError("unknown toy shape '" + kind + "' (expected cross, square or disk)");
      parts.push_back(toy_shapes(shape, width, height, count, seed + k++));
    }
    if (parts.empty()) throw UsageError("data.dataset names no toy shapes");
    ds = concat_datasets(parts);
  } else {
    if (!fs::is_directory(spec)) throw DataError("dataset directory not found: " + spec);
    ds = load_dataset(spec, width, height, cfg.get_u64("data.split_seed"));
  }
  if (cfg.get_bool("data.flip")) ds = flip_augment(ds);
  return ds;
}

int cmd_synth(const RunConfig& cfg, const SynthArgs& args) {
  const SbmArchitecture arch = cfg.architecture();
  const ShapeDataset ds = load_shapes(cfg, arch.visible_w, arch.visible_h);
  const int n = cfg.get_int("scene.n_objects");
  const SyntheticScene scene =
      synthesize(ds, n, cfg.get_int("scene.canvas_w"), cfg.get_int("scene.canvas_h"),
                 cfg.get_double("scene.sigma"), cfg.get_u64("seed"));
  make_dir(args.out);
  write_png16(args.out / "image.png", grid_cast<MembershipField>(scene.image));
  json masks = json::array();
  for (int i = 0; i < n; ++i) {
    const std::string name = numbered("mask", i + 1, ".png");
    write_mask_png(args.out / name, scene.truth_masks[static_cast<std::size_t>(i)]);
    masks.push_back(name);
  }
  json meta;
  meta["image"] = "image.png";
  meta["masks"] = masks;
  meta["n_objects"] = n;
  meta["width"] = scene.image.width();
  meta["height"] = scene.image.height();
  meta["intensities"] = scene.intensities;
  meta["shape_indices"] = scene.shape_indices;
  json pos = json::array();
  for (const auto& [x, y] : scene.positions) pos.push_back({x, y});
  meta["positions"] = pos;
  meta["sigma"] = scene.sigma;
  meta["seed"] = scene.seed;
  // Written into meta.json rather than config.txt so the directory holds
  // exactly the image, one mask per object and the metadata.
  meta["config"] = cfg.to_json();
  write_json(args.out / "meta.json", meta);
  std::cout << "wrote " << n + 2 << " files to " << args.out.string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const TrainArgs& args) {
  SbmTrainingConfig tc = cfg.training();
  SbmArchitecture arch = cfg.architecture();
  SbmParams start;
  const bool resume = !args.resume.empty();
  if (resume) load_model(args.resume, arch, start);

  const ShapeDataset ds = load_shapes(cfg, arch.visible_w, arch.visible_h);
  if (ds.width != arch.visible_w || ds.height != arch.visible_h)
    throw DataError("dataset shapes are " + std::to_string(ds.width) + "x" +
                    std::to_string(ds.height) + " but the model expects " +
                    std::to_string(arch.visible_w) + "x" + std::to_string(arch.visible_h));
  const std::vector<BinaryMask> train = ds.training_shapes();
  if (train.empty()) throw DataError("the training split is empty");
  make_dir(args.out);
  echo_config(cfg, args.out);

  std::ofstream loss(args.out / "training_loss.csv");
  if (!loss) throw DataError("cannot write training_loss.csv");
  loss << "stage,epoch,loss\n";
  auto log_curve = [&](const char* stage, const TrainingCurve& c) {
    for (std::size_t e = 0; e < c.epoch_loss.size(); ++e) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", c.epoch_loss[e]);
      loss << stage << ',' << e << ',' << buf << '\n';
    }
  };

  const auto t0 = std::chrono::steady_clock::now();
  SbmParams params;
  if (resume) {
    params = std::move(start);
  } else {
    std::cerr << "layer 1: " << tc.epochs_layer1 << " epochs on " << train.size() << " shapes\n";
    TrainResult l1 = pretrain_layer1(train, arch, tc);
    log_curve("layer1", l1.curve);
    std::cerr << "layer 2: " << tc.epochs_layer2 << " epochs\n";
    TrainResult l2 = pretrain_layer2(train, l1.params, arch, tc);
    log_curve("layer2", l2.curve);
    params = std::move(l2.params);
  }
  std::cerr << "joint: " << tc.epochs_joint << " epochs\n";
  TrainResult joint = joint_train(train, params, arch, tc);
  log_curve("joint", joint.curve);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_model(args.out / "model.sbm", arch, joint.params);
  json meta;
  meta["model"] = "model.sbm";
  meta["resumed_from"] = resume ? args.resume.string() : "";
  meta["train_shapes"] = train.size();
  meta["test_shapes"] = ds.test.size();
  meta["reconstruction_error_train"] =
      reconstruction_error(train, joint.params, arch, tc.mean_field_iters);
  const auto test = ds.test_shapes();
  if (!test.empty())
    meta["reconstruction_error_test"] =
        reconstruction_error(test, joint.params, arch, tc.mean_field_iters);
  meta["seconds"] = seconds;
  meta["config"] = cfg.to_json();
  write_json(args.out / "train_meta.json", meta);
  std::cout << "model written to " << (args.out / "model.sbm").string() << '\n';
  return kExitOk;
}

std::vector<std::uint8_t> overlay_rgb(const Image& u, const std::vector<BinaryMask>& masks) {
  static const std::uint8_t colours[3][3] = {{255, 0, 0}, {0, 255, 0}, {0, 0, 255}};
  for (const auto& m : masks)
    if (!m.same_shape(u)) throw DataError("overlay mask does not match the image");
  std::vector<std::uint8_t> rgb(u.size() * 3);
  for (std::size_t p = 0; p < u.size(); ++p) {
    const auto g = static_cast<std::uint8_t>(std::lround(u[p] * 255.0));
    rgb[3 * p] = rgb[3 * p + 1] = rgb[3 * p + 2] = g;
    // The nearest region covering the pixel decides its colour.
    for (std::size_t i = 0; i < masks.size(); ++i) {
      if (!masks[i][p]) continue;
      for (int ch = 0; ch < 3; ++ch)
        rgb[3 * p + ch] = static_cast<std::uint8_t>((g + colours[i % 3][ch]) / 2);
      break;
    }
  }
  return rgb;
}

int cmd_segment(const RunConfig& cfg, const SegmentArgs& args) {
  if (args.image.empty()) throw UsageError("an input image is required (--image)");
  const Method method = [&] {
    try {
      return parse_method(args.method);
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }();
  const Image u = read_image(args.image);

  int n = args.k;
  std::optional<std::vector<double>> intensities;
  if (!args.meta.empty()) {
    const json meta = read_json(args.meta);
    if (n == 0 && meta.contains("n_objects")) n = meta.at("n_objects").get<int>();
    if (cfg.get_bool("scene.known_intensities") && meta.contains("intensities"))
      intensities = meta.at("intensities").get<std::vector<double>>();
  }
  if (n == 0 && !args.seeds.empty()) n = static_cast<int>(args.seeds.size());
  if (n == 0) n = cfg.get_int("scene.n_objects");
  if (n < 1) throw UsageError("the region count must be positive");

  std::optional<std::vector<BinaryMask>> seeds;
  if (!args.seeds.empty()) {
    if (static_cast<int>(args.seeds.size()) != n)
      throw UsageError("expected " + std::to_string(n) + " seed masks, got " +
                       std::to_string(args.seeds.size()));
    std::vector<BinaryMask> s;
    for (const auto& p : args.seeds) {
      s.push_back(read_mask(p));
      if (!s.back().same_shape(u))
        throw DataError("seed mask " + p.string() + " does not match the image size");
    }
    seeds = std::move(s);
  }

  SbmArchitecture arch;
  SbmParams params;
  const bool need_model = method != Method::nosp;
  if (need_model) load_model_checked(args.model, arch, params);

  const SegmentationResult r =
      segment_image(u, method, n, need_model ? &params : nullptr, need_model ? &arch : nullptr,
                    cfg.solver(), cfg.init(), intensities, seeds);

  make_dir(args.out);
  echo_config(cfg, args.out);
  const int w = u.width(), h = u.height();
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    write_png16(args.out / numbered("q", i + 1, ".png"), r.scene.regions[k]);
    write_mask_png(args.out / numbered("mask", i + 1, ".png"), r.masks[k]);
  }

  write_rgb_png(args.out / "overlay.png", w, h, overlay_rgb(u, r.masks));

  std::ofstream energy(args.out / "energy.csv");
  if (!energy) throw DataError("cannot write energy.csv");
  energy << "iteration,energy\n";
  for (std::size_t t = 0; t < r.energy_trace.size(); ++t) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", r.energy_trace[t]);
    energy << t << ',' << buf << '\n';
  }

  json res;
  res["method"] = method_name(method);
  res["n_regions"] = n;
  res["intensities"] = r.scene.intensities;
  res["outer_iterations"] = r.outer_iterations;
  res["converged"] = r.converged;
  json windows = json::array();
  for (const auto& wp : r.windows)
    windows.push_back({{"offset_x", wp.offset_x}, {"offset_y", wp.offset_y}, {"scale", wp.scale}});
  res["windows"] = windows;
  res["config"] = cfg.to_json();
  write_json(args.out / "result.json", res);

  if (!r.converged) {
    std::cerr << "warning: no convergence within " << r.outer_iterations
              << " outer iterations; outputs written\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const EvalArgs& args) {
  ExperimentConfig ec;
  ec.methods.clear();
  if (args.methods == "all") {
    ec.methods = {Method::nosp, Method::single, Method::multi};
  } else {
    for (const std::string& m : split(args.methods, ',')) {
      try {
        ec.methods.push_back(parse_method(m));
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
    }
  }
  if (ec.methods.empty()) throw UsageError("no methods selected");
  ec.n_objects = cfg.get_int("scene.n_objects");
  ec.count = cfg.get_int("scene.count");
  ec.canvas_w = cfg.get_int("scene.canvas_w");
  ec.canvas_h = cfg.get_int("scene.canvas_h");
  ec.sigma = cfg.get_double("scene.sigma");
  ec.seed = cfg.get_u64("seed");
  ec.known_intensities = cfg.get_bool("scene.known_intensities");
  ec.plain_accuracy = cfg.get_bool("eval.plain_accuracy");
  ec.jobs = cfg.get_int("jobs");
  ec.solver = cfg.solver();
  ec.init = cfg.init();
  try {
    ec.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }

  const bool need_model =
      std::any_of(ec.methods.begin(), ec.methods.end(), [](Method m) { return m != Method::nosp; });
  SbmArchitecture arch = cfg.architecture();
  SbmParams params;
  if (need_model) load_model_checked(args.model, arch, params);
  const ShapeDataset ds = load_shapes(cfg, arch.visible_w, arch.visible_h);

  const ExperimentReport report =
      run_experiment(ds, need_model ? &params : nullptr, need_model ? &arch : nullptr, ec);

  make_dir(args.out);
  echo_config(cfg, args.out);
  {
    std::ofstream out(args.out / "summary.csv");
    if (!out) throw DataError("cannot write summary.csv");
    write_summary_csv(out, report);
  }
  {
    std::ofstream out(args.out / "instances.csv");
    if (!out) throw DataError("cannot write instances.csv");
    write_instances_csv(out, report);
  }
  json meta = experiment_metadata(ec, report);
  meta["config"] = cfg.to_json();
  write_json(args.out / "meta.json", meta);
  write_summary_csv(std::cout, report);
  return kExitOk;
}

int cmd_sample(const RunConfig& cfg, const SampleArgs& args) {
  if (args.count < 1) throw UsageError("--count must be positive");
  if (args.gibbs_steps < 1) throw UsageError("--gibbs-steps must be positive");
  SbmArchitecture arch;
  SbmParams params;
  load_model_checked(args.model, arch, params);
  const auto samples = sample_shapes(params, arch, args.count, args.gibbs_steps, cfg.get_u64("seed"));
  make_dir(args.out);
  echo_config(cfg, args.out);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu.png", i);
    write_mask_png(args.out / name, samples[i]);
  }
  std::cout << "wrote " << samples.size() << " samples to " << args.out.string() << '\n';
  return kExitOk;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"occseg: occlusion-aware multi-region segmentation with a shape prior"};
  app.require_subcommand(1);

  std::string config_path, profile;
  std::vector<std::pair<std::string, std::string>> flags;
  auto bind = [&flags](CLI::App* sub, const std::string& name, const std::string& key,
                       const std::string& help) {
    sub->add_option_function<std::string>(
        name, [&flags, key](const std::string& v) { flags.emplace_back(key, v); }, help);
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value file (or a JSON metadata file)");
    sub->add_option("--profile", profile, "preset applied before the config file: toy");
    sub->add_option_function<std::vector<std::string>>(
        "--set",
        [&flags](const std::vector<std::string>& kvs) {
          for (const auto& kv : kvs) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected KEY=VALUE");
            flags.emplace_back(trim(kv.substr(0, eq)), kv.substr(eq + 1));
          }
        },
        "override any configuration key (KEY=VALUE, repeatable)");
    bind(sub, "--seed", "seed", "random seed");
    bind(sub, "--jobs", "jobs", "worker threads");
    bind(sub, "--dataset", "data.dataset", "shape directory or toy:cross,square,disk");
  };

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "render one synthetic occlusion scene");
  common(s);
  s->add_option("--out", synth.out, "output directory")->required();
  bind(s, "--n-objects", "scene.n_objects", "objects per scene (2 or 3)");
  bind(s, "--sigma", "scene.sigma", "noise standard deviation");
  bind(s, "--canvas-w", "scene.canvas_w", "canvas width");
  bind(s, "--canvas-h", "scene.canvas_h", "canvas height");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a shape model on the training split");
  common(t);
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--resume", train.resume, "continue joint training from this model");

  SegmentArgs seg;
  auto* g = app.add_subcommand("segment", "segment one image into depth-ordered regions");
  common(g);
  g->add_option("--image", seg.image, "input image (PNG/PGM)")->required();
  g->add_option("--out", seg.out, "output directory")->required();
  g->add_option("--model", seg.model, "trained shape model");
  g->add_option("--meta", seg.meta, "scene metadata (region count, intensities)");
  g->add_option("--method", seg.method, "multi, single or nosp");
  g->add_option("--k", seg.k, "number of object regions");
  g->add_option("--seeds", seg.seeds, "one seed mask per region, front to back")->delimiter(',');
  bind(g, "--mu", "solver.mu", "shape prior weight");
  bind(g, "--nu", "solver.nu", "TV weight");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score methods on synthetic test scenes");
  common(e);
  e->add_option("--out", ev.out, "output directory")->required();
  e->add_option("--model", ev.model, "trained shape model");
  e->add_option("--methods", ev.methods, "all or a comma list of nosp,single,multi");
  bind(e, "--count", "scene.count", "number of scenes");
  bind(e, "--n-objects", "scene.n_objects", "objects per scene (2 or 3)");
  bind(e, "--sigma", "scene.sigma", "noise standard deviation");
  bind(e, "--mu", "solver.mu", "shape prior weight");

  SampleArgs smp;
  auto* m = app.add_subcommand("sample", "draw shapes from a trained model");
  common(m);
  m->add_option("--model", smp.model, "trained shape model")->required();
  m->add_option("--out", smp.out, "output directory")->required();
  m->add_option("--count", smp.count, "number of samples");
  m->add_option("--gibbs-steps", smp.gibbs_steps, "Gibbs sweeps per chain");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg;
    cfg.apply_profile(profile);
    if (!config_path.empty()) cfg.load_file(config_path);
    cfg.apply_env();
    for (const auto& [key, value] : flags) cfg.set(key, value);

    if (s->parsed()) return cmd_synth(cfg, synth);
    if (t->parsed()) return cmd_train(cfg, train);
    if (g->parsed()) return cmd_segment(cfg, seg);
    if (e->parsed()) return cmd_eval(cfg, ev);
    if (m->parsed()) return cmd_sample(cfg, smp);
    return kExitUsage;
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const SolverError& err) {
    std::cerr << "solver error: " << err.what() << '\n';
    return kExitNotConverged;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kExitData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitData;
  }
}

}  // namespace occseg
