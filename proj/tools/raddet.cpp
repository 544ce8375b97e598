// raddet: simulate, label, train, infer, eval, ablate-frames, plot, build.
//
// Exit codes: 0 success, 1 usage error, 2 data or runtime error.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "raddet/log.hpp"
#include "raddet/training.hpp"

namespace fs = std::filesystem;
using namespace raddet;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::istringstream is(item);
    T v{};
    if (item.empty() || !(is >> v) || !is.eof()) {
      throw UsageError(std::string(flag) + ": cannot read '" + item + "' in list '" + text + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string(flag) + ": empty list");
  return out;
}

// Flat key=value lines. Keys are long flag names without the dashes.
std::vector<std::string> read_config(const fs::path& path, const CLI::App& sub) {
  std::ifstream in(path);
  if (!in) throw UsageError("config file " + path.string() + " cannot be opened");
  std::vector<std::string> args;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config file " + path.string() + " line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key == "config" || !sub.get_option_no_throw("--" + key)) {
      throw UsageError("config file " + path.string() + " line " + std::to_string(lineno) + ": unknown key '" + key +
                       "' for " + sub.get_name());
    }
    args.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  return args;
}

// ---- simulate --------------------------------------------------------------

struct SimOpts {
  SimConfig cfg;
  fs::path out;
  double max_heading_dev_deg = -1.0;
};

void add_geometry(CLI::App* s, RadarGeometry& g) {
  s->add_option("--r-bins", g.r_bins, "range bins")->capture_default_str();
  s->add_option("--a-bins", g.a_bins, "angle bins")->capture_default_str();
  s->add_option("--d-bins", g.d_bins, "Doppler bins")->capture_default_str();
  s->add_option("--r-max", g.r_max_m, "maximum range (m)")->capture_default_str();
  s->add_option("--fov", g.fov_deg, "azimuth field of view (deg)")->capture_default_str();
  s->add_option("--v-max", g.v_max_mps, "unambiguous radial speed (m/s)")->capture_default_str();
}

void setup_simulate(CLI::App* s, SimOpts& o) {
  s->add_option("--out", o.out, "dataset directory to create")->required();
  s->add_option("--sequences", o.cfg.n_sequences, "number of sequences (>= 10)")->capture_default_str();
  s->add_option("--frames", o.cfg.frames_per_sequence, "frames per sequence")->capture_default_str();
  s->add_option("--seed", o.cfg.seed, "random seed")->capture_default_str();
  s->add_option("--dt", o.cfg.dt, "frame interval (s)")->capture_default_str();
  s->add_option("--noise", o.cfg.noise_sigma, "speckle noise sigma")->capture_default_str();
  s->add_option("--pedestrians", o.cfg.counts[0], "pedestrians per scene")->capture_default_str();
  s->add_option("--cyclists", o.cfg.counts[1], "cyclists per scene")->capture_default_str();
  s->add_option("--cars", o.cfg.counts[2], "cars per scene")->capture_default_str();
  s->add_flag("--shared-signature", o.cfg.shared_signature,
              "give every class the car's RA amplitude and spread (only Doppler differs)");
  s->add_option("--max-heading-dev", o.max_heading_dev_deg,
                "limit velocity direction to this many degrees off radial (<0: any)")
      ->capture_default_str();
  add_geometry(s, o.cfg.geometry);
}

int run_simulate(SimOpts& o) {
  if (o.max_heading_dev_deg >= 0.0) o.cfg.max_heading_dev_rad = o.max_heading_dev_deg * std::numbers::pi / 180.0;
  generate_dataset(o.cfg, o.out);
  const Dataset ds(o.out);
  std::cout << "wrote " << ds.size() << " frames to " << o.out.string() << '\n';
  return 0;
}

// ---- label -----------------------------------------------------------------

struct LabelOpts {
  fs::path data;
  std::string mode = "bivariate";
  LabelConfig cfg;
};

void add_label_options(CLI::App* s, LabelOpts& o) {
  s->add_option("--label-mode", o.mode, "bivariate or gaussian")->capture_default_str();
  s->add_option("--mask-threshold", o.cfg.mask_threshold, "fraction of the box peak kept for the fit")
      ->capture_default_str();
  s->add_option("--offset-patch", o.cfg.offset_patch, "side of the offset patch (odd)")->capture_default_str();
}

int run_label(LabelOpts& o) {
  o.cfg.mode = parse_label_mode(o.mode);
  Dataset ds(o.data);
  ds.write_targets(o.cfg);
  std::cout << "labelled " << ds.size() << " frames (" << to_string(o.cfg.mode) << ")\n";
  return 0;
}

// ---- train / ablate --------------------------------------------------------

struct TrainOpts {
  fs::path data;
  TrainConfig cfg;
  std::string variant = "cross_attention";
  std::string enc = "16,32,64,64,128,128";
  std::string dec = "128,64,32,16";
  std::string val_split = "val";
  std::string offset_loss = "focal";
  bool no_augment = false;
  std::string preset;
  LabelOpts labels;
};

void add_train_options(CLI::App* s, TrainOpts& o) {
  auto& c = o.cfg;
  s->add_option("--data", o.data, "dataset directory")->required();
  s->add_option("--variant", o.variant, "cross_attention or ra_only")->capture_default_str();
  s->add_option("--t-frames", c.model.t_frames, "stacked input frames")->capture_default_str();
  s->add_option("--enc-channels", o.enc, "encoder widths")->capture_default_str();
  s->add_option("--dec-channels", o.dec, "decoder widths")->capture_default_str();
  s->add_option("--batch", c.batch_size, "batch size")->capture_default_str();
  s->add_option("--lr", c.lr0, "initial learning rate")->capture_default_str();
  s->add_option("--plateau-factor", c.plateau_factor, "rate multiplier on plateau")->capture_default_str();
  s->add_option("--plateau-patience", c.plateau_patience, "epochs without improvement before a cut")
      ->capture_default_str();
  s->add_option("--min-lr", c.min_lr, "learning-rate floor")->capture_default_str();
  s->add_option("--epochs", c.epochs, "epochs")->capture_default_str();
  s->add_option("--max-steps", c.max_steps, "stop after this many optimizer steps (0: no cap)")->capture_default_str();
  s->add_option("--seed", c.seed, "initialisation and shuffling seed")->capture_default_str();
  s->add_option("--train-split", c.train_split, "split to train on")->capture_default_str();
  s->add_option("--val-split", o.val_split, "split monitored by the scheduler ('none': training loss)")
      ->capture_default_str();
  s->add_option("--max-train-frames", c.max_train_frames, "use only the first N training frames (0: all)")
      ->capture_default_str();
  s->add_flag("--no-augment", o.no_augment, "disable noise and flip augmentation");
  s->add_option("--w1", c.weights.w1, "heatmap loss weight")->capture_default_str();
  s->add_option("--w2", c.weights.w2, "offset loss weight")->capture_default_str();
  s->add_option("--w3", c.weights.w3, "heading loss weight")->capture_default_str();
  s->add_option("--offset-loss", o.offset_loss, "focal or l1")->capture_default_str();
  s->add_option("--preset", o.preset,
                "overfit: 16 training frames, batch 8, 300 steps, no augmentation, training-loss monitor");
  add_label_options(s, o.labels);
}

template <typename T>
void preset_value(const CLI::App* s, const char* flag, T& field, T value) {
  if (s->get_option(flag)->count() == 0) field = value;
}

void finish_train_options(const CLI::App* s, TrainOpts& o) {
  auto& c = o.cfg;
  if (!o.preset.empty()) {
    if (o.preset != "overfit") throw UsageError("--preset: unknown preset '" + o.preset + "' (expected overfit)");
    preset_value(s, "--batch", c.batch_size, 8);
    preset_value(s, "--max-train-frames", c.max_train_frames, std::size_t{16});
    preset_value(s, "--max-steps", c.max_steps, std::size_t{300});
    preset_value(s, "--epochs", c.epochs, 150);
    preset_value(s, "--val-split", o.val_split, std::string("none"));
    preset_value(s, "--no-augment", o.no_augment, true);
  }
  c.model.variant = parse_variant(o.variant);
  c.model.enc_channels = parse_list<int>(o.enc, "--enc-channels");
  c.model.dec_channels = parse_list<int>(o.dec, "--dec-channels");
  c.val_split = o.val_split == "none" ? "" : o.val_split;
  c.augment = !o.no_augment;
  if (o.offset_loss != "focal" && o.offset_loss != "l1") {
    throw UsageError("--offset-loss must be focal or l1, got '" + o.offset_loss + "'");
  }
  c.weights.offset_l1 = o.offset_loss == "l1";
  o.labels.cfg.mode = parse_label_mode(o.labels.mode);
  c.labels = o.labels.cfg;
}

int run_train(TrainOpts& o, const fs::path& out) {
  o.cfg.out_dir = out;
  Dataset ds(o.data);
  const auto res = train(ds, o.cfg);
  std::cout << "trained " << res.steps << " steps, final loss " << std::setprecision(6)
            << res.history.back().loss << ", checkpoints in " << out.string() << '\n';
  return 0;
}

// ---- infer / eval ----------------------------------------------------------

void add_inference_options(CLI::App* s, InferenceConfig& c) {
  s->add_option("--kernel", c.kernel, "peak window side (odd)")->capture_default_str();
  s->add_option("--score-thresh", c.score_thresh, "minimum heatmap score")->capture_default_str();
  s->add_option("--nms-radius", c.nms_radius_m, "distance-NMS radius (m)")->capture_default_str();
  s->add_flag_callback("--no-nms", [&c] { c.nms = false; }, "skip distance-NMS");
}

struct InferOpts {
  fs::path data, checkpoint, out;
  std::string split = "test";
  std::size_t max_frames = 0;
  InferenceConfig icfg;
};

int run_infer(InferOpts& o) {
  Dataset ds(o.data);
  Model m = Model::load(o.checkpoint);
  const auto dets = infer(m, ds, o.split, o.icfg, o.max_frames);
  write_detections(o.out, dets);
  std::size_t n = 0;
  for (const auto& f : dets) n += f.detections.size();
  std::cout << "wrote " << n << " detections for " << dets.size() << " frames to " << o.out.string() << '\n';
  return 0;
}

struct EvalOpts {
  InferOpts src;
  fs::path detections, json = "eval.json", csv = "eval.csv";
  bool oracle = false;
  std::string thresholds = "2,1";
  std::string interpolation = "all";
  std::string model_name;
};

int run_eval(EvalOpts& o) {
  const int sources = !o.src.checkpoint.empty() + !o.detections.empty() + o.oracle;
  if (sources != 1) throw UsageError("eval needs exactly one of --checkpoint, --detections, --oracle");
  EvalConfig ec;
  ec.thresholds_m = parse_list<double>(o.thresholds, "--thresholds");
  if (o.interpolation == "all") {
    ec.interpolation = ApInterpolation::all_point;
  } else if (o.interpolation == "eleven") {
    ec.interpolation = ApInterpolation::eleven_point;
  } else {
    throw UsageError("--interpolation must be all or eleven, got '" + o.interpolation + "'");
  }
  Dataset ds(o.src.data);
  EvalReport r;
  std::string name = o.model_name;
  if (o.oracle) {
    r = evaluate_detections(oracle_detections(ds, o.src.split, o.src.icfg, o.src.max_frames), ds, o.src.split, ec,
                            o.src.max_frames);
    if (name.empty()) name = "oracle";
  } else if (!o.detections.empty()) {
    r = evaluate_detections(read_detections(o.detections), ds, o.src.split, ec, o.src.max_frames);
    if (name.empty()) name = o.detections.stem().string();
  } else {
    Model m = Model::load(o.src.checkpoint);
    r = evaluate(m, ds, o.src.split, o.src.icfg, ec, o.src.max_frames);
    if (name.empty()) name = to_string(m.config().variant);
  }
  write_report(r, o.json, o.csv, name);
  std::cout << csv_header() << '\n' << csv_rows(r, name);
  return 0;
}

// ---- ablate-frames ---------------------------------------------------------

struct AblateOpts {
  TrainOpts train;
  fs::path out = "ablation.csv";
  fs::path runs_dir;
  std::string t_list = "1,3,5";
  std::string seeds = "1,2,3";
  std::string split = "test";
};

int run_ablate(AblateOpts& o) {
  Dataset ds(o.train.data);
  auto base = o.train.cfg;
  base.out_dir = o.runs_dir;
  const auto rep = ablate_frames(ds, parse_list<int>(o.t_list, "--t-list"),
                                 parse_list<std::uint64_t>(o.seeds, "--seeds"), base, o.split);
  const auto csv = ablation_csv(rep);
  std::ofstream f(o.out, std::ios::trunc);
  if (!f) throw DataError("cannot write " + o.out.string());
  f << csv;
  std::cout << csv;
  return 0;
}

// ---- plot ------------------------------------------------------------------

struct PlotOpts {
  fs::path data, checkpoint, detections, out;
  std::string frame;
  std::string map = "ra";
  int class_id = -1;
  InferenceConfig icfg;
};

void write_pgm(const fs::path& path, const std::vector<double>& v, int rows, int cols,
               const std::vector<std::pair<int, int>>& marks) {
  double lo = v.empty() ? 0.0 : v[0], hi = lo;
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  std::vector<unsigned char> px(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    px[i] = hi > lo ? static_cast<unsigned char>(std::lround(254.0 * (v[i] - lo) / (hi - lo))) : 0;
  }
  // Detections are marked with the one value the map never uses.
  for (auto [r, a] : marks)
    if (r >= 0 && r < rows && a >= 0 && a < cols) px[static_cast<std::size_t>(r) * cols + a] = 255;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << "P5\n" << cols << ' ' << rows << "\n255\n";
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

std::vector<double> channel(const std::vector<double>& v, int c, std::size_t plane) {
  return {v.begin() + static_cast<std::ptrdiff_t>(c * plane), v.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane)};
}

std::vector<double> class_max(const std::vector<double>& heat, int class_id, std::size_t plane) {
  if (class_id >= 0) return channel(heat, class_id, plane);
  std::vector<double> out(plane, 0.0);
  for (int c = 0; c < kNumClasses; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[i] = std::max(out[i], heat[c * plane + i]);
  return out;
}

int run_plot(PlotOpts& o) {
  Dataset ds(o.data);
  std::size_t idx = ds.size();
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.record(i).id == o.frame) idx = i;
  if (idx == ds.size()) throw DataError("dataset " + o.data.string() + " has no frame '" + o.frame + "'");
  if (o.class_id >= kNumClasses) throw UsageError("--class must be 0, 1 or 2");
  const auto& g = ds.geometry();
  const int R = g.r_bins, A = g.a_bins, D = g.d_bins;
  const auto plane = static_cast<std::size_t>(R) * A;

  // Network maps come from the checkpoint when given, otherwise from the targets.
  TargetMaps maps;
  const bool needs_maps = o.map != "ra" && o.map != "rd" && o.map != "ad";
  if (needs_maps || !o.checkpoint.empty()) {
    if (!o.checkpoint.empty()) {
      Model m = Model::load(o.checkpoint);
      if (!(m.config().geometry == g)) throw DataError("checkpoint geometry does not match the dataset");
      NoGradGuard guard;
      const auto out = m.forward(make_input(ds.load_stack(idx, m.config().t_frames)), false);
      maps.rows = R;
      maps.cols = A;
      auto copy = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
      maps.heatmap = copy(out.heatmap);
      maps.offset = copy(out.offset);
      for (auto& v : maps.offset) v = 2.0 * v - 1.0;
      maps.heading = copy(out.heading);
      maps.offset_mask.assign(plane, 1.0);
      maps.heading_mask.assign(plane / 16, 1.0);
    } else {
      maps = ds.has_targets() ? ds.load_targets(idx) : make_targets(ds.load_frame(idx), ds.record(idx).annotations);
    }
  }

  std::vector<std::pair<int, int>> marks;
  std::ofstream arrows;
  auto open_arrows = [&](const std::string& header) {
    fs::path p = o.out;
    p.replace_extension(".csv");
    arrows.open(p, std::ios::trunc);
    if (!arrows) throw DataError("cannot write " + p.string());
    arrows << header << '\n' << std::setprecision(9);
  };
  if (!o.detections.empty()) {
    open_arrows("class,r_bin,a_bin,heading_deg,dr,da");
    for (const auto& f : read_detections(o.detections)) {
      if (f.frame_id != o.frame) continue;
      for (const auto& d : f.detections) {
        marks.emplace_back(static_cast<int>(std::lround(d.r)), static_cast<int>(std::lround(d.a)));
        arrows << class_name(d.class_id) << ',' << d.r << ',' << d.a << ',';
        if (d.heading_rad) {
          // Heading 0 points downrange (+r); positive turns toward +a.
          arrows << *d.heading_rad * 180.0 / std::numbers::pi << ',' << std::cos(*d.heading_rad) << ','
                 << std::sin(*d.heading_rad) << '\n';
        } else {
          arrows << ",,\n";
        }
      }
    }
  }

  if (o.map == "ra" || o.map == "rd" || o.map == "ad") {
    const RadarFrame f = ds.load_frame(idx);
    const auto& src = o.map == "ra" ? f.ra : o.map == "rd" ? f.rd : f.ad;
    const int rows = o.map == "ad" ? A : R, cols = o.map == "ra" ? A : D;
    write_pgm(o.out, std::vector<double>(src.begin(), src.end()), rows, cols, o.map == "ra" ? marks : decltype(marks){});
  } else if (o.map == "heatmap") {
    write_pgm(o.out, class_max(maps.heatmap, o.class_id, plane), R, A, marks);
  } else if (o.map == "offset-r" || o.map == "offset-a") {
    write_pgm(o.out, channel(maps.offset, o.map == "offset-r" ? 0 : 1, plane), R, A, marks);
  } else if (o.map == "offset-mask") {
    write_pgm(o.out, maps.offset_mask, R, A, marks);
  } else if (o.map == "heading") {
    const int hr = R / 4, ha = A / 4;
    const auto hplane = static_cast<std::size_t>(hr) * ha;
    std::vector<double> mag(hplane);
    if (!arrows.is_open()) open_arrows("class,r_bin,a_bin,heading_deg,dr,da");
    for (int r = 0; r < hr; ++r)
      for (int a = 0; a < ha; ++a) {
        const std::size_t i = static_cast<std::size_t>(r) * ha + a;
        const double s = maps.heading[i], c = maps.heading[hplane + i];
        mag[i] = std::hypot(s, c);
        if (maps.heading_mask[i] == 0.0 || mag[i] < 0.5) continue;
        arrows << ',' << 4 * r + 2 << ',' << 4 * a + 2 << ',' << std::atan2(s, c) * 180.0 / std::numbers::pi << ','
               << c / mag[i] << ',' << s / mag[i] << '\n';
      }
    write_pgm(o.out, mag, hr, ha, {});
  } else {
    throw UsageError("--map must be ra, rd, ad, heatmap, offset-r, offset-a, offset-mask or heading; got '" + o.map +
                     "'");
  }
  std::cout << "wrote " << o.out.string() << '\n';
  return 0;
}

// ---- build -----------------------------------------------------------------

struct BuildOpts {
  TrainOpts train;
  fs::path data;
};

int run_build(BuildOpts& o, RadarGeometry g) {
  auto& mc = o.train.cfg.model;
  mc.variant = parse_variant(o.train.variant);
  mc.enc_channels = parse_list<int>(o.train.enc, "--enc-channels");
  mc.dec_channels = parse_list<int>(o.train.dec, "--dec-channels");
  mc.geometry = o.data.empty() ? g : Dataset(o.data).geometry();
  std::cout << "variant,parameters\n";
  std::size_t counts[3]{};
  const ModelVariant all[3]{ModelVariant::cross_attention, ModelVariant::three_decoder, ModelVariant::ra_only};
  for (int i = 0; i < 3; ++i) {
    ModelConfig c = mc;
    c.variant = all[i];
    counts[i] = Model(c, o.train.cfg.seed).parameter_count();
    std::cout << to_string(all[i]) << ',' << counts[i] << '\n';
  }
  std::cout << "single-decoder reduction vs three decoders: " << std::fixed << std::setprecision(1)
            << 100.0 * (1.0 - static_cast<double>(counts[0]) / static_cast<double>(counts[1])) << "%\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radar object detection and heading estimation on synthetic range-angle-Doppler data"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.footer(
      "Every subcommand accepts --config FILE: flat key=value lines whose keys are the long flag names without the\n"
      "leading dashes (for example 'lr=0.001'). Config values take precedence over flags given on the command line.\n"
      "Exit codes: 0 success, 1 usage error, 2 data or runtime error.");
  std::string config;
  bool verbose = false;

  auto with_common = [&](CLI::App* s) {
    s->add_option("--config", config, "key=value file overriding flags");
    s->add_flag("--verbose", verbose, "log progress to stderr");
    return s;
  };

  SimOpts sim;
  auto* s_sim = with_common(app.add_subcommand("simulate", "write a synthetic dataset"));
  setup_simulate(s_sim, sim);

  LabelOpts lab;
  auto* s_lab = with_common(app.add_subcommand("label", "compute and cache training targets"));
  s_lab->add_option("--data", lab.data, "dataset directory")->required();
  add_label_options(s_lab, lab);

  TrainOpts tr;
  fs::path train_out;
  auto* s_tr = with_common(app.add_subcommand("train", "train a model; writes train_log.csv, best.ckpt, last.ckpt"));
  add_train_options(s_tr, tr);
  s_tr->add_option("--out", train_out, "output directory")->required();

  InferOpts inf;
  auto* s_inf = with_common(app.add_subcommand("infer", "write detections as JSON lines"));
  s_inf->add_option("--data", inf.data, "dataset directory")->required();
  s_inf->add_option("--checkpoint", inf.checkpoint, "model checkpoint")->required();
  s_inf->add_option("--split", inf.split, "train, val, test or all")->capture_default_str();
  s_inf->add_option("--out", inf.out, "output .jsonl")->required();
  s_inf->add_option("--max-frames", inf.max_frames, "only the first N frames of the split (0: all)")
      ->capture_default_str();
  add_inference_options(s_inf, inf.icfg);

  EvalOpts ev;
  auto* s_ev = with_common(app.add_subcommand("eval", "score a checkpoint, a detections file or the oracle"));
  s_ev->add_option("--data", ev.src.data, "dataset directory")->required();
  s_ev->add_option("--checkpoint", ev.src.checkpoint, "model checkpoint");
  s_ev->add_option("--detections", ev.detections, "detections .jsonl from infer");
  s_ev->add_flag("--oracle", ev.oracle, "decode the ground-truth target maps as predictions");
  s_ev->add_option("--split", ev.src.split, "train, val, test or all")->capture_default_str();
  s_ev->add_option("--max-frames", ev.src.max_frames, "only the first N frames of the split (0: all)")
      ->capture_default_str();
  s_ev->add_option("--json", ev.json, "report JSON path")->capture_default_str();
  s_ev->add_option("--csv", ev.csv, "report CSV path")->capture_default_str();
  s_ev->add_option("--thresholds", ev.thresholds, "matching distances (m)")->capture_default_str();
  s_ev->add_option("--interpolation", ev.interpolation, "AP interpolation: all or eleven")->capture_default_str();
  s_ev->add_option("--model-name", ev.model_name, "label for the CSV model column");
  add_inference_options(s_ev, ev.src.icfg);

  AblateOpts ab;
  auto* s_ab = with_common(app.add_subcommand("ablate-frames", "heading accuracy against stacked input frames"));
  add_train_options(s_ab, ab.train);
  s_ab->add_option("--out", ab.out, "CSV path")->capture_default_str();
  s_ab->add_option("--runs-dir", ab.runs_dir, "keep per-run checkpoints and logs here");
  s_ab->add_option("--t-list", ab.t_list, "frame counts to compare")->capture_default_str();
  s_ab->add_option("--seeds", ab.seeds, "seeds per frame count")->capture_default_str();
  s_ab->add_option("--eval-split", ab.split, "split scored after training")->capture_default_str();

  PlotOpts pl;
  auto* s_pl = with_common(app.add_subcommand("plot", "render a map as PGM; heading and detections as CSV arrows"));
  s_pl->add_option("--data", pl.data, "dataset directory")->required();
  s_pl->add_option("--frame", pl.frame, "frame id")->required();
  s_pl->add_option("--map", pl.map, "ra, rd, ad, heatmap, offset-r, offset-a, offset-mask or heading")
      ->capture_default_str();
  s_pl->add_option("--class", pl.class_id, "heatmap class (default: max over classes)");
  s_pl->add_option("--checkpoint", pl.checkpoint, "take heatmap/offset/heading from this model");
  s_pl->add_option("--detections", pl.detections, "overlay detections from a .jsonl file");
  s_pl->add_option("--out", pl.out, "output .pgm (arrows go next to it as .csv)")->required();

  BuildOpts bd;
  RadarGeometry bgeom;
  auto* s_bd = with_common(app.add_subcommand("build", "print parameter counts of the model variants"));
  s_bd->add_option("--data", bd.data, "take the geometry from this dataset");
  s_bd->add_option("--t-frames", bd.train.cfg.model.t_frames, "stacked input frames")->capture_default_str();
  s_bd->add_option("--enc-channels", bd.train.enc, "encoder widths")->capture_default_str();
  s_bd->add_option("--dec-channels", bd.train.dec, "decoder widths")->capture_default_str();
  s_bd->add_option("--seed", bd.train.cfg.seed, "initialisation seed")->capture_default_str();
  add_geometry(s_bd, bgeom);

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    if (!config.empty()) {
      auto extra = read_config(config, *app.get_subcommands().front());
      args.insert(args.end(), extra.begin(), extra.end());
      rev.assign(args.rbegin(), args.rend());
      app.parse(rev);
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\nrun with --help for usage\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  if (verbose) set_log_level(LogLevel::info);

  try {
    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "simulate") return run_simulate(sim);
    if (name == "label") return run_label(lab);
    if (name == "train") {
      finish_train_options(sub, tr);
      tr.cfg.verbose = verbose;
      return run_train(tr, train_out);
    }
    if (name == "infer") return run_infer(inf);
    if (name == "eval") return run_eval(ev);
    if (name == "ablate-frames") {
      finish_train_options(sub, ab.train);
      ab.train.cfg.verbose = verbose;
      return run_ablate(ab);
    }
    if (name == "plot") return run_plot(pl);
    if (name == "build") return run_build(bd, bgeom);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
