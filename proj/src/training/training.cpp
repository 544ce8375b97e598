#include "raddet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "raddet/log.hpp"
#include "raddet/optim.hpp"
#include "raddet/rng.hpp"

namespace raddet {

PlateauScheduler::PlateauScheduler(double lr0, double factor, int patience, double delta, double min_lr)
    : lr0_(lr0), lr_(lr0), factor_(factor), delta_(delta), min_lr_(min_lr), patience_(patience) {
  if (!(lr0 > 0.0)) throw std::invalid_argument("scheduler: lr0 must be positive");
  if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("scheduler: factor must be in (0,1)");
  if (patience < 1) throw std::invalid_argument("scheduler: patience must be >= 1");
}

double PlateauScheduler::step(double loss) {
  if (!best_ || loss < *best_ - delta_) {
    best_ = loss;
    bad_ = 0;
    return lr_;
  }
  if (++bad_ < patience_) return lr_;
  bad_ = 0;
  ++reductions_;
  // lr0 * factor^k snapped to 15 significant digits, so 1e-4 steps to exactly 1e-5, 1e-6, ...
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", lr0_ * std::pow(factor_, reductions_));
  lr_ = std::max(std::strtod(buf, nullptr), min_lr_);
  return lr_;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(lr0 > 0.0)) fail("lr0 must be positive");
  if (model.t_frames < 1) fail("t_frames must be >= 1");
}

SampleSource::SampleSource(const Dataset& dataset, int t_frames, LabelConfig labels)
    : ds_(dataset), t_frames_(t_frames), labels_(labels), cache_(dataset.size()) {}

const SampleSource::Sample& SampleSource::sample(std::size_t i) {
  auto& slot = cache_.at(i);
  if (!slot) {
    Sample s;
    s.stack = ds_.load_stack(i, t_frames_);
    s.targets = ds_.has_targets() ? ds_.load_targets(i) : make_targets(s.stack.back(), ds_.record(i).annotations, labels_);
    slot = std::move(s);
  }
  return *slot;
}

Batch SampleSource::batch(const std::vector<std::size_t>& indices, Rng* augment_rng,
                          const AugmentConfig& augmentation) {
  std::vector<ModelInput> inputs;
  std::vector<TargetMaps> targets;
  Batch b;
  for (std::size_t i : indices) {
    const Sample& s = sample(i);
    b.ids.push_back(ds_.record(i).id);
    if (augment_rng) {
      auto stack = s.stack;
      auto t = s.targets;
      auto anns = ds_.record(i).annotations;
      augment(stack, t, anns, *augment_rng, augmentation);
      inputs.push_back(make_input(stack));
      targets.push_back(std::move(t));
    } else {
      inputs.push_back(make_input(s.stack));
      targets.push_back(s.targets);
    }
  }
  b.input = batch_inputs(inputs);
  b.targets = make_target_batch(targets);
  return b;
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& idx, int batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < idx.size(); i += static_cast<std::size_t>(batch_size)) {
    out.emplace_back(idx.begin() + static_cast<long>(i),
                     idx.begin() + static_cast<long>(std::min(idx.size(), i + static_cast<std::size_t>(batch_size))));
  }
  return out;
}

void check_geometry(const Model& model, const Dataset& ds) {
  if (!(model.config().geometry == ds.geometry())) {
    const auto& a = model.config().geometry;
    const auto& b = ds.geometry();
    throw DataError("checkpoint geometry " + std::to_string(a.r_bins) + "x" + std::to_string(a.a_bins) + "x" +
                    std::to_string(a.d_bins) + " does not match dataset geometry " + std::to_string(b.r_bins) + "x" +
                    std::to_string(b.a_bins) + "x" + std::to_string(b.d_bins));
  }
}

std::vector<std::size_t> limit(std::vector<std::size_t> idx, std::size_t max_frames) {
  if (max_frames && idx.size() > max_frames) idx.resize(max_frames);
  return idx;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

double validation_loss(Model& model, SampleSource& source, const std::vector<std::size_t>& indices,
                       const LossWeights& weights, int batch_size) {
  NoGradGuard guard;
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& b : make_batches(indices, batch_size)) {
    const Batch batch = source.batch(b, nullptr, {});
    const auto out = model.forward(batch.input, false);
    total += total_loss(out, batch.targets, weights).total.item() * static_cast<double>(b.size());
    n += b.size();
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  ModelConfig mc = cfg.model;
  mc.geometry = ds.geometry();
  auto model = std::make_shared<Model>(mc, cfg.seed);
  Adam opt(model->parameters());
  PlateauScheduler sched(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_delta, cfg.min_lr);
  SampleSource source(ds, mc.t_frames, cfg.labels);

  const auto train_idx = limit(ds.split_indices(cfg.train_split), cfg.max_train_frames);
  if (train_idx.empty()) throw DataError("split '" + cfg.train_split + "' is empty");
  std::vector<std::size_t> val_idx;
  if (!cfg.val_split.empty()) {
    val_idx = ds.split_indices(cfg.val_split);
    if (val_idx.empty()) throw DataError("split '" + cfg.val_split + "' is empty");
  }

  std::ofstream log_csv;
  TrainResult res;
  res.model = model;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    log_csv.open(cfg.out_dir / "train_log.csv", std::ios::trunc);
    if (!log_csv) throw DataError("cannot write " + (cfg.out_dir / "train_log.csv").string());
    log_csv << "epoch,lr,L,L_b,L_c,L_h,val_L\n";
    res.best_checkpoint = cfg.out_dir / "best.ckpt";
  }

  Rng shuffle_rng(Rng::mix(cfg.seed ^ 0x5eed5eedULL));
  Rng aug_rng(Rng::mix(cfg.seed ^ 0xa06a06ULL));
  std::optional<double> best;
  double lr = sched.lr();
  bool done = false;
  for (int epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
    auto order = train_idx;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    std::size_t seen = 0;
    int bi = 0;
    for (const auto& b : make_batches(order, cfg.batch_size)) {
      const Batch batch = source.batch(b, cfg.augment ? &aug_rng : nullptr, cfg.augmentation);
      opt.zero_grad();
      const auto diverged = [&] {
        std::string ids;
        for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
        return TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) +
                             " (frames " + ids + ")");
      };
      const auto out = model->forward(batch.input, true);
      // The losses reject NaN predictions, so check the outputs first.
      for (const Tensor* t : {&out.heatmap, &out.offset, &out.heading})
        for (double v : t->data())
          if (!std::isfinite(v)) throw diverged();
      const auto loss = total_loss(out, batch.targets, cfg.weights);
      const double l = loss.total.item();
      if (!std::isfinite(l)) throw diverged();
      loss.total.backward();
      opt.step(lr);
      const auto w = static_cast<double>(b.size());
      log.loss += l * w;
      log.heatmap += loss.heatmap * w;
      log.offset += loss.offset * w;
      log.heading += loss.heading * w;
      seen += b.size();
      res.step_losses.push_back(l);
      ++res.steps;
      ++bi;
      if (cfg.max_steps && res.steps >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    const auto n = static_cast<double>(seen);
    log.loss /= n;
    log.heatmap /= n;
    log.offset /= n;
    log.heading /= n;
    if (!val_idx.empty()) log.val_loss = validation_loss(*model, source, val_idx, cfg.weights, cfg.batch_size);
    const double monitor = log.val_loss.value_or(log.loss);
    if (!best || monitor < *best) {
      best = monitor;
      if (!res.best_checkpoint.empty()) {
        model->save(res.best_checkpoint, "{\"epoch\": " + std::to_string(epoch) + ", \"monitor\": " + fmt(monitor) + "}");
      }
    }
    lr = sched.step(monitor);
    if (log_csv.is_open()) {
      log_csv << log.epoch << ',' << fmt(log.lr) << ',' << fmt(log.loss) << ',' << fmt(log.heatmap) << ','
              << fmt(log.offset) << ',' << fmt(log.heading) << ',' << (log.val_loss ? fmt(*log.val_loss) : "")
              << '\n';
      log_csv.flush();
    }
    if (cfg.verbose) {
      log_info("epoch " + std::to_string(epoch) + " lr " + fmt(log.lr) + " loss " + fmt(log.loss) +
               (log.val_loss ? " val " + fmt(*log.val_loss) : ""));
    }
    res.history.push_back(log);
  }
  res.best_monitor = best.value_or(0.0);
  if (!cfg.out_dir.empty()) model->save(cfg.out_dir / "last.ckpt", "{\"steps\": " + std::to_string(res.steps) + "}");
  return res;
}

std::vector<FrameDetections> infer(Model& model, const Dataset& ds, const std::string& split,
                                   const InferenceConfig& config, std::size_t max_frames) {
  check_geometry(model, ds);
  const auto idx = limit(ds.split_indices(split), max_frames);
  SampleSource source(ds, model.config().t_frames, {});
  std::vector<FrameDetections> out;
  NoGradGuard guard;
  for (const auto& b : make_batches(idx, 8)) {
    std::vector<ModelInput> inputs;
    for (std::size_t i : b) inputs.push_back(make_input(ds.load_stack(i, model.config().t_frames)));
    const auto dets = decode_output(model.forward(batch_inputs(inputs), false), ds.geometry(), config);
    for (std::size_t k = 0; k < b.size(); ++k) out.push_back({ds.record(b[k]).id, dets[k]});
  }
  return out;
}

EvalReport evaluate_detections(const std::vector<FrameDetections>& detections, const Dataset& ds,
                               const std::string& split, const EvalConfig& eval, std::size_t max_frames) {
  std::map<std::string, const std::vector<Detection>*> by_id;
  for (const auto& f : detections) by_id[f.frame_id] = &f.detections;
  std::vector<FrameResult> frames;
  for (std::size_t i : limit(ds.split_indices(split), max_frames)) {
    FrameResult fr;
    const auto& rec = ds.record(i);
    if (auto it = by_id.find(rec.id); it != by_id.end()) fr.detections = *it->second;
    fr.ground_truth = ground_truth_from(rec.annotations, ds.geometry());
    frames.push_back(std::move(fr));
  }
  return evaluate_frames(frames, eval);
}

EvalReport evaluate(Model& model, const Dataset& ds, const std::string& split, const InferenceConfig& inference,
                    const EvalConfig& eval, std::size_t max_frames) {
  return evaluate_detections(infer(model, ds, split, inference, max_frames), ds, split, eval, max_frames);
}

std::vector<FrameDetections> oracle_detections(const Dataset& ds, const std::string& split,
                                               const InferenceConfig& config, std::size_t max_frames) {
  std::vector<FrameDetections> out;
  for (std::size_t i : limit(ds.split_indices(split), max_frames)) {
    const TargetMaps t = ds.has_targets() ? ds.load_targets(i) : make_targets(ds.load_frame(i), ds.record(i).annotations);
    out.push_back({ds.record(i).id, decode_targets(t, ds.geometry(), config)});
  }
  return out;
}

AblationReport ablate_frames(const Dataset& ds, const std::vector<int>& t_list, const std::vector<std::uint64_t>& seeds,
                             const TrainConfig& base, const std::string& eval_split, const EvalConfig& eval) {
  if (t_list.empty() || seeds.empty()) throw std::invalid_argument("ablate_frames: need at least one t and one seed");
  std::map<int, int> seq_len;
  for (const auto& r : ds.manifest().frames) seq_len[r.sequence]++;
  const int shortest = std::min_element(seq_len.begin(), seq_len.end(), [](auto& a, auto& b) {
                         return a.second < b.second;
                       })->second;
  const int longest_t = *std::max_element(t_list.begin(), t_list.end());
  if (shortest < longest_t) {
    throw DataError("sequences hold " + std::to_string(shortest) + " frames but t = " + std::to_string(longest_t) +
                    " was requested");
  }
  AblationReport rep;
  for (int t : t_list) {
    if (t < 1) throw std::invalid_argument("ablate_frames: t must be >= 1");
    std::vector<AblationRow> rows;
    for (auto seed : seeds) {
      TrainConfig cfg = base;
      cfg.model.t_frames = t;
      cfg.seed = seed;
      if (!base.out_dir.empty()) cfg.out_dir = base.out_dir / ("t" + std::to_string(t) + "_s" + std::to_string(seed));
      const auto t0 = std::chrono::steady_clock::now();
      auto res = train(ds, cfg);
      const std::chrono::duration<double> took = std::chrono::steady_clock::now() - t0;
      const auto report = evaluate(*res.model, ds, eval_split, {}, eval);
      AblationRow row{t, seed, report.heading_acc, report.thresholds.front().map, took.count()};
      rows.push_back(row);
      rep.runs.push_back(row);
    }
    AblationRow med{t, 0, {}, std::nullopt};
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    for (std::size_t b = 0; b < 3; ++b) {
      std::vector<double> v;
      for (const auto& r : rows) v.push_back(r.heading_acc[b]);
      med.heading_acc[b] = median(v);
    }
    std::vector<double> maps;
    for (const auto& r : rows)
      if (r.map) maps.push_back(*r.map);
    if (!maps.empty()) med.map = median(maps);
    rep.medians.push_back(med);
  }
  return rep;
}

std::string ablation_csv(const AblationReport& r) {
  std::string out = "t_frames,seed,heading_45,heading_22.5,heading_11.25,map\n";
  auto row = [&](const AblationRow& a, const std::string& seed) {
    out += std::to_string(a.t_frames) + "," + seed;
    for (double h : a.heading_acc) out += "," + fmt(h);
    out += "," + (a.map ? fmt(*a.map) : std::string()) + "\n";
  };
  for (const auto& a : r.runs) row(a, std::to_string(a.seed));
  for (const auto& a : r.medians) row(a, "median");
  return out;
}

}  // namespace raddet
