#include "unforge/runner.hpp"

#include "unforge/checkpoint.hpp"
#include "unforge/errors.hpp"
#include "unforge/extrapolation.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

namespace unforge {

std::shared_ptr<const WorldCache::Entry> WorldCache::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : it->second;
}

void WorldCache::put(const std::string& key, std::shared_ptr<const Entry> entry) {
  entries_[key] = std::move(entry);
}

namespace {

namespace fs = std::filesystem;

enum class SplitKind { ByRatio, Overlap, Continual };

// One seed's data, model and fine-tuned anchors. Heap-allocated and pinned:
// the evaluator keeps references into it.
struct World {
  std::uint64_t seed = 0;
  std::string dir;  // relative to the output directory
  DatasetSplit split;
  std::vector<std::vector<QAPair>> stages;
  std::unique_ptr<Transformer> model;
  ParamStore ref;
  ParamStore oracle;
  std::unique_ptr<Evaluator> eval;
  std::string ref_ckpt;
  std::string oracle_ckpt;
};

std::string ratio_tag(double r) { return format_real(r); }

class Run {
 public:
  Run(const ExperimentConfig& cfg, RunManifest& man, WorldCache* cache)
      : cfg_(cfg), man_(man), cache_(cache), out_(cfg.output_dir) {}

  const ExperimentConfig& cfg() const { return cfg_; }

  template <class F>
  auto stage(const std::string& name, F&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Timer {
      RunManifest& man;
      std::string name;
      std::chrono::steady_clock::time_point t0;
      ~Timer() {
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        man.stages.push_back({name, dt.count()});
      }
    } timer{man_, name, t0};
    return fn();
  }

  std::unique_ptr<World> world(std::uint64_t seed, SplitKind kind, double ratio, const std::string& dir) {
    auto w = std::make_unique<World>();
    w->seed = seed;
    w->dir = dir;
    const auto corpus = generate_corpus(seed, cfg_.n_entities, cfg_.attrs_per_entity);
    DatasetSplit train_split;
    switch (kind) {
      case SplitKind::ByRatio:
        w->split = split_by_ratio(corpus, ratio, seed, cfg_.heldout_pairs);
        break;
      case SplitKind::Overlap:
        w->split = split_overlap(corpus, ratio, seed, cfg_.heldout_pairs);
        break;
      case SplitKind::Continual: {
        ContinualSplit cs = split_continual(corpus, cfg_.continual_ratios, seed, cfg_.heldout_pairs);
        w->split.retain = cs.retain;
        w->split.heldout_world = cs.heldout_world;
        for (const auto& st : cs.stages) w->split.forget.insert(w->split.forget.end(), st.begin(), st.end());
        w->split.forget_ratio = static_cast<double>(w->split.forget.size()) /
                                static_cast<double>(w->split.forget.size() + w->split.retain.size());
        w->stages = std::move(cs.stages);
        break;
      }
    }
    w->model = std::make_unique<Transformer>(model_config(cfg_, seed));

    std::ostringstream key;
    key << static_cast<int>(kind) << '|' << format_real(ratio) << '|' << seed << '|' << cfg_.n_entities << '|'
        << cfg_.attrs_per_entity << '|' << cfg_.heldout_pairs << '|';
    for (double r : cfg_.continual_ratios) key << format_real(r) << ',';
    key << '|' << cfg_.ctx_len << '|' << cfg_.d_model << '|' << cfg_.n_layers << '|' << cfg_.n_heads << '|'
        << cfg_.d_ff << '|' << format_real(cfg_.ft_lr) << '|' << cfg_.ft_epochs << '|' << cfg_.oracle_epochs << '|' << cfg_.ft_batch_size << '|'
        << format_real(cfg_.ft_warmup_epochs) << '|' << format_real(cfg_.weight_decay);
    std::shared_ptr<const WorldCache::Entry> entry = cache_ ? cache_->find(key.str()) : nullptr;
    if (!entry) {
      auto fresh = std::make_shared<WorldCache::Entry>();
      const TrainConfig ft = finetune_config(cfg_, seed);
      stage(dir + "/finetune_ref", [&] {
        TrainResult r = finetune_reference(*w->model, w->split, ft);
        if (r.divergence) throw Error("reference fine-tuning diverged: " + r.divergence->reason);
        fresh->ref = std::move(r.theta);
        fresh->ref_trace = std::move(r.trace);
      });
      stage(dir + "/finetune_oracle", [&] {
        TrainResult r = retrain_oracle(*w->model, w->split, oracle_config(cfg_, seed));
        if (r.divergence) throw Error("oracle training diverged: " + r.divergence->reason);
        fresh->oracle = std::move(r.theta);
        fresh->oracle_trace = std::move(r.trace);
      });
      entry = fresh;
      if (cache_) cache_->put(key.str(), entry);
    }
    w->ref = entry->ref;
    w->oracle = entry->oracle;

    fs::create_directories(out_ / dir);
    write_file(dir + "/data.jsonl", "data", [&](std::ostream& o) { write_split_jsonl(o, w->split); });
    write_file(dir + "/ref_trace.csv", "trace", [&](std::ostream& o) { entry->ref_trace.write_csv(o); });
    write_file(dir + "/oracle_trace.csv", "trace", [&](std::ostream& o) { entry->oracle_trace.write_csv(o); });
    w->ref_ckpt = save(*w, w->ref, "ref", Provenance::Ref, "ref");
    w->oracle_ckpt = save(*w, w->oracle, "oracle", Provenance::Oracle, "oracle");
    w->eval = std::make_unique<Evaluator>(*w->model, w->split, w->ref, w->oracle, seed);
    return w;
  }

  void write_file(const std::string& rel, const std::string& kind, const std::function<void(std::ostream&)>& fn) {
    const fs::path path = out_ / rel;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    fn(out);
    out.close();
    if (!out) throw IoError("cannot write " + path.string());
    man_.artifacts.push_back({rel, kind});
  }

  std::string save(const World& w, const ParamStore& theta, const std::string& name, Provenance prov,
                   const std::string& method) {
    const std::string rel = w.dir + "/" + name + ".ckpt";
    CheckpointMeta meta;
    meta.model = w.model->config();
    meta.provenance = prov;
    meta.info = {{"scenario", cfg_.scenario}, {"method", method}, {"seed", std::to_string(w.seed)},
                 {"config_hash", man_.config_hash}};
    save_checkpoint(theta, meta, out_ / rel);
    man_.artifacts.push_back({rel, "checkpoint"});
    return rel;
  }

  void trace(const World& w, const std::string& name, const TrainResult& r) {
    write_file(w.dir + "/" + name + "_trace.csv", "trace", [&](std::ostream& o) { r.trace.write_csv(o); });
  }

  TrainResult train_from(const World& w, const std::string& name, const ParamStore& start, const ParamStore* anchor,
                         const DatasetSplit& data, const TrainConfig& tc, const TrainHooks& hooks = {}) {
    TrainResult r = stage(w.dir + "/" + name, [&] { return train(*w.model, start, anchor, data, tc, hooks); });
    trace(w, name, r);
    return r;
  }

  TrainResult unlearn(const World& w, const std::string& name, const ObjectiveSpec& spec,
                      const TrainHooks& hooks = {}) {
    TrainConfig tc = unlearn_config(cfg_, w.seed);
    tc.objective = spec;
    return train_from(w, name, w.ref, &w.ref, w.split, tc, hooks);
  }

  ReportRow& record(const World& w, const std::string& method, const ParamStore& theta, const std::string& ckpt,
                    const Evaluator* ev = nullptr) {
    ReportRow row;
    row.method = method;
    row.seed = w.seed;
    row.checkpoint = ckpt;
    row.metrics = stage(w.dir + "/eval_" + method, [&] { return (ev ? *ev : *w.eval).evaluate(theta); });
    man_.rows.push_back(std::move(row));
    return man_.rows.back();
  }

  // Saves the checkpoint and evaluates it in one go.
  ReportRow& keep(const World& w, const std::string& method, const std::string& name, const ParamStore& theta,
                  Provenance prov, const TrainResult* from = nullptr, const Evaluator* ev = nullptr) {
    const std::string ckpt = save(w, theta, name, prov, method);
    ReportRow& row = record(w, method, theta, ckpt, ev);
    if (from) mark(row, *from);
    return row;
  }

  void mark(ReportRow& row, const TrainResult& r) {
    if (!r.divergence) return;
    row.status = "diverged";
    row.divergence_step = r.divergence->step;
  }

  ReportRow& with_knob(ReportRow& row, const std::string& knob, double value) {
    row.knob = knob;
    row.value = value;
    return row;
  }

  void rows_ref_oracle(const World& w) {
    record(w, "ref", w.ref, w.ref_ckpt);
    record(w, "oracle", w.oracle, w.oracle_ckpt);
  }

  const fs::path& out() const { return out_; }
  RunManifest& manifest() { return man_; }

 private:
  const ExperimentConfig& cfg_;
  RunManifest& man_;
  WorldCache* cache_;
  fs::path out_;
};

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

// Extrapolates after every momentum_every-th epoch (and the last) and folds
// the result into one running ensemble per eta.
struct MomentumTracker {
  const ParamStore& ref;
  Real alpha;
  int every;
  int epochs;
  std::vector<Real> etas;
  std::vector<std::optional<ParamStore>> ensembles;

  MomentumTracker(const ParamStore& r, Real a, int e, int n, std::vector<Real> eta_list)
      : ref(r), alpha(a), every(e), epochs(n), etas(std::move(eta_list)), ensembles(etas.size()) {}

  void operator()(int epoch, const ParamStore& theta) {
    if ((epoch + 1) % every != 0 && epoch + 1 != epochs) return;
    const ParamStore cur = mox_extrapolate(ref, theta, alpha);
    for (std::size_t i = 0; i < etas.size(); ++i) ensembles[i] = momentum_update(cur, ensembles[i], etas[i]);
  }
  const ParamStore& result(std::size_t i) const { return *ensembles.at(i); }
};

ObjectiveSpec spec_for(const ExperimentConfig& cfg, Variant v) { return objective_spec(cfg, v); }

// ---- scenarios -------------------------------------------------------------

void finetune_scenario(Run& run, std::uint64_t seed) {
  auto w = run.world(seed, SplitKind::ByRatio, run.cfg().forget_ratio, seed_dir(seed));
  run.rows_ref_oracle(*w);
}

void mox_pair(Run& run, const World& w, const std::string& method, const ObjectiveSpec& spec) {
  TrainResult mem = run.unlearn(w, method + "_mem", spec);
  run.save(w, mem.theta, method + "_mem", Provenance::Mem, method);
  run.keep(w, method, method, mox_extrapolate(w.ref, mem.theta, run.cfg().alpha), Provenance::For, &mem);
}

void unlearn_baselines_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  auto w = run.world(seed, SplitKind::ByRatio, cfg.forget_ratio, seed_dir(seed));
  run.rows_ref_oracle(*w);

  for (const Variant v : {Variant::GA, Variant::GAD, Variant::KlBaseline, Variant::NPO}) {
    const std::string name(variant_name(v));
    TrainResult r = run.unlearn(*w, name, spec_for(cfg, v));
    run.keep(*w, name, name, r.theta, Provenance::Baseline, &r);
  }

  {
    // Preference baseline: learn the refusal on forget prompts, keep retain.
    DatasetSplit po = w->split;
    po.forget = make_targeted(w->split.forget, cfg.target_text, cfg.ctx_len);
    TrainConfig tc = unlearn_config(cfg, seed);
    tc.objective = spec_for(cfg, Variant::WeightedGD);
    tc.objective.beta = 1.0;
    TrainResult r = run.train_from(*w, "po", w->ref, &w->ref, po, tc);
    run.keep(*w, "po", "po", r.theta, Provenance::Baseline, &r);
  }

  {
    DatasetSplit forget_only;
    forget_only.forget = w->split.forget;
    TrainConfig tc = unlearn_config(cfg, seed);
    TrainResult ft = run.train_from(*w, "tv_ft", w->ref, &w->ref, forget_only, tc);
    run.save(*w, ft.theta, "tv_ft", Provenance::Baseline, "tv");
    run.keep(*w, "tv", "tv", task_vector_unlearn(w->ref, ft.theta, cfg.alpha), Provenance::Baseline, &ft);
  }

  {
    MomentumTracker mom(w->ref, cfg.alpha, cfg.momentum_every, cfg.epochs, {cfg.eta});
    TrainHooks hooks;
    hooks.on_epoch_end = std::ref(mom);
    TrainResult mem = run.unlearn(*w, "mox_ce_mem", spec_for(cfg, Variant::MoxMemCE), hooks);
    run.save(*w, mem.theta, "mox_ce_mem", Provenance::Mem, "mox_ce");
    run.keep(*w, "mox_ce", "mox_ce", mox_extrapolate(w->ref, mem.theta, cfg.alpha), Provenance::For, &mem);
    run.keep(*w, "mox_momentum", "mox_momentum", mom.result(0), Provenance::For, &mem);
  }
  mox_pair(run, *w, "mox_po", spec_for(cfg, Variant::MoxMemPO));
  mox_pair(run, *w, "mox_targeted", spec_for(cfg, Variant::MoxTargetedCE));
}

void alpha_sweep_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  auto w = run.world(seed, SplitKind::ByRatio, cfg.forget_ratio, seed_dir(seed));
  TrainResult mem = run.unlearn(*w, "mox_ce_mem", spec_for(cfg, Variant::MoxMemCE));
  run.save(*w, mem.theta, "mox_ce_mem", Provenance::Mem, "mox_ce");
  for (const double a : cfg.alphas) {
    ReportRow& row = run.keep(*w, "mox_ce", "mox_ce_alpha" + format_real(a), mox_extrapolate(w->ref, mem.theta, a),
                              Provenance::For, &mem);
    run.with_knob(row, "alpha", a);
  }
}

void eta_sweep_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  auto w = run.world(seed, SplitKind::ByRatio, cfg.forget_ratio, seed_dir(seed));
  MomentumTracker mom(w->ref, cfg.alpha, cfg.momentum_every, cfg.epochs, cfg.etas);
  TrainHooks hooks;
  hooks.on_epoch_end = std::ref(mom);
  TrainResult mem = run.unlearn(*w, "mox_ce_mem", spec_for(cfg, Variant::MoxMemCE), hooks);
  run.save(*w, mem.theta, "mox_ce_mem", Provenance::Mem, "mox_ce");
  for (std::size_t i = 0; i < cfg.etas.size(); ++i) {
    ReportRow& row = run.keep(*w, "mox_momentum", "mox_momentum_eta" + format_real(cfg.etas[i]), mom.result(i),
                              Provenance::For, &mem);
    run.with_knob(row, "eta", cfg.etas[i]);
  }
}

void ablation_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  auto w = run.world(seed, SplitKind::ByRatio, cfg.forget_ratio, seed_dir(seed));
  run.rows_ref_oracle(*w);
  struct Arm {
    const char* name;
    Variant variant;
    bool kl;
  };
  const Arm arms[] = {
      {"mox_gd", Variant::MoxMemCE, false},          {"mox_gd_kl", Variant::MoxMemCE, true},
      {"mox_gd_target", Variant::MoxTargetedCE, false}, {"mox_gd_kl_target", Variant::MoxTargetedCE, true},
      {"mox_po", Variant::MoxMemPO, false},          {"mox_po_kl", Variant::MoxMemPO, true},
      {"mox_po_target", Variant::MoxTargetedPO, false}, {"mox_po_kl_target", Variant::MoxTargetedPO, true},
  };
  for (const Arm& a : arms) {
    ObjectiveSpec spec = spec_for(cfg, a.variant);
    if (!a.kl) spec.kl_weight = 0.0;
    mox_pair(run, *w, a.name, spec);
  }
}

void stability_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  auto w = run.world(seed, SplitKind::ByRatio, cfg.forget_ratio, seed_dir(seed));
  for (const double weight : cfg.weights) {
    const std::string tag = format_real(weight);
    ObjectiveSpec ga = spec_for(cfg, Variant::WeightedGA);
    ga.beta = weight;
    TrainResult r = run.unlearn(*w, "weighted_ga_w" + tag, ga);
    run.with_knob(run.keep(*w, "weighted_ga", "weighted_ga_w" + tag, r.theta, Provenance::Baseline, &r), "weight",
                  weight);
    ObjectiveSpec npo = spec_for(cfg, Variant::WeightedNPO);
    npo.forget_weight = weight;
    r = run.unlearn(*w, "weighted_npo_w" + tag, npo);
    run.with_knob(run.keep(*w, "weighted_npo", "weighted_npo_w" + tag, r.theta, Provenance::Baseline, &r), "weight",
                  weight);
  }
  TrainResult mem = run.unlearn(*w, "mox_ce_mem", spec_for(cfg, Variant::MoxMemCE));
  run.save(*w, mem.theta, "mox_ce_mem", Provenance::Mem, "mox_ce");
  for (const double weight : cfg.weights) {
    ReportRow& row = run.keep(*w, "mox_ce", "mox_ce_w" + format_real(weight),
                              mox_extrapolate(w->ref, mem.theta, weight), Provenance::For, &mem);
    run.with_knob(row, "weight", weight);
  }
}

void standard_methods(Run& run, const World& w, const std::string& knob, std::optional<double> value) {
  const auto& cfg = run.cfg();
  auto tag = [&](ReportRow& row) {
    if (value) run.with_knob(row, knob, *value);
  };
  for (const Variant v : {Variant::GA, Variant::NPO}) {
    const std::string name(variant_name(v));
    TrainResult r = run.unlearn(w, name, spec_for(cfg, v));
    tag(run.keep(w, name, name, r.theta, Provenance::Baseline, &r));
  }
  TrainResult mem = run.unlearn(w, "mox_ce_mem", spec_for(cfg, Variant::MoxMemCE));
  run.save(w, mem.theta, "mox_ce_mem", Provenance::Mem, "mox_ce");
  tag(run.keep(w, "mox_ce", "mox_ce", mox_extrapolate(w.ref, mem.theta, cfg.alpha), Provenance::For, &mem));
}

void forget_size_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  // Small ratios are raised until the forget set is big enough to score;
  // the knob records the realized fraction.
  const int min_entities = static_cast<int>((kMinForgetPairs + cfg.attrs_per_entity - 1) / cfg.attrs_per_entity);
  const double floor_ratio = static_cast<double>(min_entities) / cfg.n_entities;
  for (const double requested : cfg.forget_ratios) {
    const double ratio = std::max(requested, floor_ratio);
    auto w = run.world(seed, SplitKind::ByRatio, ratio, seed_dir(seed) + "/ratio_" + ratio_tag(requested));
    const double realized = static_cast<double>(w->split.forget.size()) /
                            static_cast<double>(w->split.forget.size() + w->split.retain.size());
    run.with_knob(run.record(*w, "ref", w->ref, w->ref_ckpt), "forget_ratio", realized);
    standard_methods(run, *w, "forget_ratio", realized);
  }
}

void overlap_scenario(Run& run, std::uint64_t seed) {
  auto w = run.world(seed, SplitKind::Overlap, run.cfg().forget_ratio, seed_dir(seed));
  run.rows_ref_oracle(*w);
  standard_methods(run, *w, "", std::nullopt);
}

void direction_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  auto w = run.world(seed, SplitKind::ByRatio, cfg.forget_ratio, seed_dir(seed));
  TrainResult mem = run.unlearn(*w, "mox_ce_mem", spec_for(cfg, Variant::MoxMemCE));
  TrainResult npo = run.unlearn(*w, "npo", spec_for(cfg, Variant::NPO));
  TrainResult ga = run.unlearn(*w, "ga", spec_for(cfg, Variant::GA));
  const ParamStore fore = mox_extrapolate(w->ref, mem.theta, cfg.alpha);
  run.keep(*w, "mox_ce_mem", "mox_ce_mem", mem.theta, Provenance::Mem, &mem);
  run.keep(*w, "mox_ce", "mox_ce", fore, Provenance::For, &mem);
  run.keep(*w, "npo", "npo", npo.theta, Provenance::Baseline, &npo);
  run.keep(*w, "ga", "ga", ga.theta, Provenance::Baseline, &ga);

  const std::vector<std::pair<std::string, const ParamStore*>> models{
      {"mem", &mem.theta}, {"npo", &npo.theta}, {"for", &fore}, {"ga", &ga.theta}};
  std::vector<ParamStore> deltas;
  for (const auto& [name, theta] : models) deltas.push_back(direction_delta(*theta, w->ref));
  run.write_file(w->dir + "/directions.csv", "directions_csv", [&](std::ostream& o) {
    o << "seed,a,b,cosine\n";
    for (std::size_t i = 0; i < models.size(); ++i)
      for (std::size_t j = 0; j < models.size(); ++j)
        o << seed << ',' << models[i].first << ',' << models[j].first << ','
          << format_real(direction_cosine(deltas[i], deltas[j])) << '\n';
  });
}

void trajectory_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  auto w = run.world(seed, SplitKind::ByRatio, cfg.forget_ratio, seed_dir(seed));
  auto sampled = [&](int epoch) { return (epoch + 1) % cfg.trace_every == 0 || epoch + 1 == cfg.epochs; };
  auto sample = [&](const std::string& method, const ParamStore& theta, int epoch) {
    ReportRow& row = run.record(*w, method, theta, "");
    row.epoch = epoch + 1;
  };
  for (const Variant v : {Variant::GA, Variant::NPO}) {
    const std::string name(variant_name(v));
    TrainHooks hooks;
    hooks.on_epoch_end = [&](int epoch, const ParamStore& theta) {
      if (sampled(epoch)) sample(name, theta, epoch);
    };
    TrainResult r = run.unlearn(*w, name, spec_for(cfg, v), hooks);
    if (r.divergence) {
      ReportRow& row = run.record(*w, name, r.theta, "");
      run.mark(row, r);
    }
  }
  MomentumTracker mom(w->ref, cfg.alpha, cfg.momentum_every, cfg.epochs, {cfg.eta});
  TrainHooks hooks;
  hooks.on_epoch_end = [&](int epoch, const ParamStore& theta) {
    mom(epoch, theta);
    if (!sampled(epoch)) return;
    sample("mox_ce", mox_extrapolate(w->ref, theta, cfg.alpha), epoch);
    if (mom.ensembles[0]) sample("mox_momentum", mom.result(0), epoch);
  };
  run.unlearn(*w, "mox_ce_mem", spec_for(cfg, Variant::MoxMemCE), hooks);
}

void continual_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  auto w = run.world(seed, SplitKind::Continual, 0.0, seed_dir(seed));
  run.record(*w, "ref", w->ref, w->ref_ckpt);

  // Cumulative forget sets, one evaluator per stage.
  std::vector<std::unique_ptr<DatasetSplit>> evals_split;
  std::vector<std::unique_ptr<Evaluator>> evals;
  for (std::size_t k = 0; k < w->stages.size(); ++k) {
    auto s = std::make_unique<DatasetSplit>();
    s->retain = w->split.retain;
    s->heldout_world = w->split.heldout_world;
    for (std::size_t j = 0; j <= k; ++j) s->forget.insert(s->forget.end(), w->stages[j].begin(), w->stages[j].end());
    evals.push_back(std::make_unique<Evaluator>(*w->model, *s, w->ref, w->oracle, seed));
    evals_split.push_back(std::move(s));
  }

  for (const Variant v : {Variant::GA, Variant::NPO, Variant::MoxMemCE}) {
    const bool mox = v == Variant::MoxMemCE;
    const std::string method = mox ? "mox_ce" : std::string(variant_name(v));
    ParamStore cur = w->ref;
    bool diverged = false;
    for (std::size_t k = 0; k < w->stages.size() && !diverged; ++k) {
      DatasetSplit stage_split;
      stage_split.retain = w->split.retain;
      stage_split.forget = w->stages[k];
      stage_split.heldout_world = w->split.heldout_world;
      TrainConfig tc = unlearn_config(cfg, seed + 1000 * (k + 1));
      tc.epochs = cfg.continual_epochs;
      tc.lr_peak = cfg.continual_lr;
      tc.objective = spec_for(cfg, v);
      const std::string name = method + "_stage" + std::to_string(k + 1);
      TrainResult r = run.train_from(*w, name + (mox ? "_mem" : ""), cur, &cur, stage_split, tc);
      cur = mox ? mox_extrapolate(cur, r.theta, cfg.alpha) : r.theta;
      ReportRow& row =
          run.keep(*w, method, name, cur, mox ? Provenance::For : Provenance::Baseline, &r, evals[k].get());
      run.with_knob(row, "stage", static_cast<double>(k + 1));
      diverged = r.divergence.has_value();
    }
  }
}

void relearn_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  auto w = run.world(seed, SplitKind::ByRatio, cfg.forget_ratio, seed_dir(seed));
  run.rows_ref_oracle(*w);
  DatasetSplit forget_only;
  forget_only.forget = w->split.forget;
  TrainConfig relearn = unlearn_config(cfg, seed);
  relearn.epochs = cfg.relearn_epochs;
  relearn.lr_peak = cfg.relearn_lr;

  auto relearn_from = [&](const std::string& method, const ParamStore& unlearned) {
    TrainResult r = run.train_from(*w, method + "_relearn", unlearned, &w->ref, forget_only, relearn);
    run.with_knob(run.keep(*w, method, method + "_relearn", r.theta, Provenance::Baseline, &r), "relearn", 1.0);
  };
  for (const Variant v : {Variant::GA, Variant::NPO}) {
    const std::string name(variant_name(v));
    TrainResult r = run.unlearn(*w, name, spec_for(cfg, v));
    run.with_knob(run.keep(*w, name, name, r.theta, Provenance::Baseline, &r), "relearn", 0.0);
    relearn_from(name, r.theta);
  }
  TrainResult mem = run.unlearn(*w, "mox_ce_mem", spec_for(cfg, Variant::MoxMemCE));
  run.save(*w, mem.theta, "mox_ce_mem", Provenance::Mem, "mox_ce");
  const ParamStore fore = mox_extrapolate(w->ref, mem.theta, cfg.alpha);
  run.with_knob(run.keep(*w, "mox_ce", "mox_ce", fore, Provenance::For, &mem), "relearn", 0.0);
  relearn_from("mox_ce", fore);
}

void motivation_scenario(Run& run, std::uint64_t seed) {
  const auto& cfg = run.cfg();
  auto w = run.world(seed, SplitKind::ByRatio, cfg.forget_ratio, seed_dir(seed));
  run.record(*w, "ref", w->ref, w->ref_ckpt).epoch = 0;
  for (const double beta : cfg.fig1_betas) {
    for (const Variant v : {Variant::WeightedGD, Variant::WeightedGA}) {
      const std::string method(variant_name(v));
      const std::string name = method + "_beta" + format_real(beta);
      TrainConfig tc = unlearn_config(cfg, seed);
      tc.optimizer = optimizer_from_name(cfg.fig1_optimizer);
      tc.lr_peak = cfg.fig1_lr;
      tc.epochs = cfg.fig1_epochs;
      tc.retain_per_forget = cfg.fig1_retain_per_forget;
      tc.objective = spec_for(cfg, v);
      tc.objective.beta = beta;
      TrainHooks hooks;
      hooks.on_epoch_end = [&](int epoch, const ParamStore& theta) {
        if ((epoch + 1) % cfg.fig1_trace_every != 0 || epoch + 1 == cfg.fig1_epochs) return;
        ReportRow& row = run.record(*w, method, theta, "");
        run.with_knob(row, "beta", beta).epoch = epoch + 1;
      };
      TrainResult r = run.train_from(*w, name, w->ref, &w->ref, w->split, tc, hooks);
      ReportRow& row = run.keep(*w, method, name, r.theta, Provenance::Baseline, &r);
      run.with_knob(row, "beta", beta).epoch = static_cast<int>(r.trace.rows.empty() ? 0 : r.trace.rows.back().epoch + 1);
    }
  }
  TrainResult mem = run.unlearn(*w, "mox_ce_mem", spec_for(cfg, Variant::MoxMemCE));
  run.keep(*w, "mox_ce_mem", "mox_ce_mem", mem.theta, Provenance::Mem, &mem);
  run.with_knob(run.keep(*w, "mox_ce", "mox_ce", mox_extrapolate(w->ref, mem.theta, cfg.alpha), Provenance::For, &mem),
                "alpha", cfg.alpha);
}

using ScenarioFn = void (*)(Run&, std::uint64_t);

ScenarioFn scenario_fn(Scenario s) {
  switch (s) {
    case Scenario::Finetune: return finetune_scenario;
    case Scenario::UnlearnBaselines: return unlearn_baselines_scenario;
    case Scenario::MoxAlphaSweep: return alpha_sweep_scenario;
    case Scenario::EtaSweep: return eta_sweep_scenario;
    case Scenario::Ablation: return ablation_scenario;
    case Scenario::StabilityWeightSweep: return stability_scenario;
    case Scenario::ForgetSizeSweep: return forget_size_scenario;
    case Scenario::DirectionAnalysis: return direction_scenario;
    case Scenario::Trajectory: return trajectory_scenario;
    case Scenario::Continual: return continual_scenario;
    case Scenario::Relearn: return relearn_scenario;
    case Scenario::Overlap: return overlap_scenario;
    case Scenario::MotivationFig1: return motivation_scenario;
  }
  throw ConfigError("unhandled scenario");
}

void fail(RunManifest& man, int code, const std::string& what) {
  man.status = "failed";
  man.error = what;
  man.exit_code = code;
}

}  // namespace

RunManifest run_scenario(const ExperimentConfig& config, WorldCache* cache) {
  RunManifest man;
  man.scenario = config.scenario;
  man.seeds = config.seeds;
  man.output_dir = config.output_dir;
  try {
    config.validate();
  } catch (const ConfigError& e) {
    fail(man, 2, e.what());
    return man;
  }
  man.config_hash = config_hash(config);

  try {
    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec) throw IoError("cannot create " + config.output_dir + ": " + ec.message());
    {
      const fs::path cfg_path = fs::path(config.output_dir) / "config.txt";
      std::ofstream out(cfg_path, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot open " + cfg_path.string() + " for writing");
      out << canonical_text(config);
      if (!out) throw IoError("cannot write " + cfg_path.string());
      man.artifacts.push_back({"config.txt", "config"});
    }
    Run run(config, man, cache);
    const ScenarioFn fn = scenario_fn(scenario_from_name(config.scenario));
    for (const std::uint64_t seed : config.seeds) fn(run, seed);
  } catch (const ConfigError& e) {
    fail(man, 2, e.what());
  } catch (const IoError& e) {
    fail(man, 4, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    fail(man, 4, e.what());
  } catch (const std::exception& e) {
    fail(man, 1, e.what());
  }

  if (man.status != "failed") {
    for (const auto& r : man.rows) {
      if (r.status == "diverged") {
        man.status = "diverged";
        man.exit_code = 3;
        break;
      }
    }
  }
  try {
    emit_report(man);
  } catch (const IoError& e) {
    if (man.status != "failed") fail(man, 4, e.what());
  }
  return man;
}

std::vector<RunManifest> run_suite(const ExperimentConfig& config) {
  WorldCache cache;
  std::vector<RunManifest> out;
  for (const Scenario s : all_scenarios()) {
    ExperimentConfig c = config;
    c.scenario = std::string(scenario_name(s));
    c.output_dir = (fs::path(config.output_dir) / c.scenario).string();
    out.push_back(run_scenario(c, &cache));
  }
  return out;
}

int combined_exit_code(const std::vector<RunManifest>& manifests) {
  for (const auto& m : manifests)
    if (m.status == "failed") return m.exit_code;
  for (const auto& m : manifests)
    if (m.status == "diverged") return 3;
  return 0;
}

}  // namespace unforge
