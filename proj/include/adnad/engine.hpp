#pragma once

// The online two-layer detection engine.
//
// Each incoming record extends a sliding window that the scorer turns into a
// loss. Before enough abnormal losses have been seen (Initial phase) the loss
// is compared with T1 alone; afterwards (Steady phase) losses below T1 are
// confidently normal, losses above T2 confidently abnormal, and the band in
// between is decided by a random forest trained on the confident samples.
// Every m records the thresholds are refitted from bounded loss buffers, the
// scorer is fine-tuned on pseudo-normal windows and the forest is retrained.

#include <adnad/error.hpp>
#include <adnad/ingest.hpp>
#include <adnad/label.hpp>
#include <adnad/lstm_vae.hpp>
#include <adnad/random.hpp>
#include <adnad/random_forest.hpp>
#include <adnad/threshold.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace adnad {

/// What the engine needs from its first layer: a deterministic score and an
/// incremental training step.
template <class S>
concept WindowScorer = requires(S s, const S cs, const SequenceWindow& w,
                                std::span<const SequenceWindow> ws, int epochs, Rng& rng) {
  { cs.score(w) } -> std::convertible_to<double>;
  s.train(ws, epochs, rng);
};

/// Bounded first-in-first-out queue of losses.
class LossBuffer {
 public:
  explicit LossBuffer(std::size_t capacity = 5000) : capacity_(capacity) {
    if (capacity == 0) fail(Errc::InvalidConfig, "loss buffer capacity must be positive");
  }

  void push(double v) {
    if (values_.size() == capacity_) values_.pop_front();
    values_.push_back(v);
  }

  std::size_t size() const { return values_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return values_.empty(); }
  std::vector<double> values() const { return {values_.begin(), values_.end()}; }

 private:
  std::size_t capacity_;
  std::deque<double> values_;
};

enum class Phase { Initial, Steady };
enum class Route { HighConfNormal, HighConfAbnormal, Classifier };

inline std::string_view phase_name(Phase p) { return p == Phase::Initial ? "initial" : "steady"; }

inline std::string_view route_name(Route r) {
  switch (r) {
    case Route::HighConfNormal: return "high_conf_normal";
    case Route::HighConfAbnormal: return "high_conf_abnormal";
    case Route::Classifier: return "classifier";
  }
  return "unknown";
}

struct EngineConfig {
  std::size_t n = 500;          // abnormal losses that end the Initial phase
  std::size_t m = 6400;         // records between retrains
  double p1 = 0.98;             // percentile of the normal-loss fit giving T1
  double p2 = 0.10;             // percentile of the abnormal-loss fit giving T2
  std::size_t buffer_capacity = 5000;
  int first_round_epochs = 30;
  int update_epochs = 5;
  ForestConfig forest;
  std::uint64_t seed = 0;

  // Ablation switches; all on for the full engine.
  bool adapt_thresholds = true;  // refit T1/T2 at every retrain
  bool update_scorer = true;     // fine-tune the scorer at every retrain
  bool two_layer = true;         // allow the Steady phase and the forest

  void validate() const {
    if (n < 1 || m < 1) fail(Errc::InvalidConfig, "engine: n and m must be >= 1");
    if (!(p1 > 0 && p1 < 1) || !(p2 > 0 && p2 < 1)) fail(Errc::InvalidConfig, "engine: p1 and p2 must lie in (0,1)");
    if (buffer_capacity < 2) fail(Errc::InvalidConfig, "engine: buffer capacity must be >= 2");
    if (n > buffer_capacity) fail(Errc::InvalidConfig, "engine: n cannot exceed the buffer capacity");
    if (first_round_epochs < 0 || update_epochs < 0) fail(Errc::InvalidConfig, "engine: epochs must be >= 0");
  }
};

struct Verdict {
  std::int64_t index = 0;
  Label label = Label::Normal;
  Route route = Route::HighConfNormal;
  double loss = 0.0;
  /// Ranking score in [0,1]: each route owns a third of the range (normal,
  /// classifier, abnormal from low to high) and the position inside the band
  /// comes from the loss relative to the thresholds or from the forest vote.
  double score = 0.0;
  std::optional<std::array<int, 2>> votes;
  double t1 = 0.0;
  std::optional<double> t2;
};

struct RetrainReport {
  std::size_t retrain = 0;  // 1-based
  std::int64_t last_index = 0;
  Phase phase = Phase::Initial;
  double old_t1 = 0.0, new_t1 = 0.0;
  std::optional<double> old_t2, new_t2;
  std::size_t scorer_windows = 0;
  std::size_t forest_samples = 0;
  bool forest_trained = false;
  std::size_t normal_buffer = 0, abnormal_buffer = 0;
};

/// Receives engine events; all callbacks default to no-ops.
class EngineSink {
 public:
  virtual ~EngineSink() = default;
  virtual void on_verdict(const Verdict&) {}
  virtual void on_retrain(const RetrainReport&) {}
  virtual void on_phase_change(std::int64_t /*index*/, const ThresholdPair&) {}
  virtual void on_warning(const std::string&) {}
};

template <WindowScorer Scorer>
class Engine {
 public:
  Engine(EngineConfig config, Scorer scorer, std::size_t dims, int timestep, EngineSink* sink = nullptr)
      : config_(std::move(config)),
        scorer_(std::move(scorer)),
        dims_(dims),
        timestep_(timestep),
        window_(timestep, dims),
        normal_losses_(config_.buffer_capacity),
        abnormal_losses_(config_.buffer_capacity),
        pending_xy_(dims),
        rng_(config_.seed),
        sink_ptr_(sink) {
    config_.validate();
    thresholds_.p1 = config_.p1;
    thresholds_.p2 = config_.p2;
  }

  /// Trains the scorer on the first-round windows (or on `pretrain` rows when
  /// given), fills the normal buffer with the first-round losses and sets T1.
  void bootstrap(std::span<const std::vector<double>> first_round,
                 std::span<const std::vector<double>> pretrain = {}) {
    const auto first = windows_of(first_round);
    if (first.size() < 2) fail(Errc::InsufficientData, "bootstrap: first round yields fewer than 2 windows");
    if (pretrain.empty()) {
      scorer_.train(first, config_.first_round_epochs, rng_);
    } else {
      const auto pre = windows_of(pretrain);
      if (pre.empty()) fail(Errc::InsufficientData, "bootstrap: pretraining rows yield no windows");
      scorer_.train(pre, config_.first_round_epochs, rng_);
    }
    for (const auto& w : first) normal_losses_.push(checked_score(w));
    try {
      const auto t = adaptive_threshold(normal_losses_.values(), config_.p1);
      thresholds_.t1 = t.threshold;
      thresholds_.fit_normal = t.fit;
    } catch (const Error& e) {
      fail(Errc::InsufficientData, std::string("bootstrap: cannot fit first-round losses: ") + e.what());
    }
    // The live window continues from the tail of the first round.
    const auto tail = std::min<std::size_t>(first_round.size(), std::size_t(timestep_ - 1));
    for (std::size_t i = first_round.size() - tail; i < first_round.size(); ++i)
      window_.push(first_round[i], -1);
    bootstrapped_ = true;
  }

  /// Scores one record, routes it, updates buffers, and retrains when the
  /// batch is full.
  Verdict process(std::span<const double> features, std::int64_t index) {
    if (!bootstrapped_) fail(Errc::NotBootstrapped, "process called before bootstrap");
    window_.push(features, index);
    const auto w = window_.window();
    const double loss = checked_score(w);
    ++seen_;
    ++batch_;

    Verdict v = route(loss, features, index);
    if (phase_ == Phase::Initial) {
      pending_xy_.add(features, v.label);
      if (v.label == Label::Normal) {
        normal_losses_.push(loss);
        pending_normal_.push_back(w);
      } else {
        abnormal_losses_.push(loss);
      }
    } else if (v.route == Route::HighConfNormal) {
      normal_losses_.push(loss);
      pending_xy_.add(features, Label::Normal);
      pending_normal_.push_back(w);
    } else if (v.route == Route::HighConfAbnormal) {
      abnormal_losses_.push(loss);
      pending_xy_.add(features, Label::Abnormal);
    } else if (v.label == Label::Normal) {
      pending_normal_.push_back(w);
    }
    if (sink_()) sink_()->on_verdict(v);

    if (phase_ == Phase::Initial) phase_transition(index);
    if (batch_ == config_.m) retrain(index);
    return v;
  }

  /// Classifies rows with the current models and thresholds without changing
  /// any state. Windows continue from the live window; scoring is spread over
  /// `threads` workers.
  std::vector<Verdict> evaluate_frozen(std::span<const std::vector<double>> rows, std::int64_t first_index,
                                       unsigned threads = 1) const {
    if (!bootstrapped_) fail(Errc::NotBootstrapped, "evaluate called before bootstrap");
    SlidingWindow sw = window_;
    std::vector<SequenceWindow> ws;
    ws.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sw.push(rows[i], first_index + std::int64_t(i));
      ws.push_back(sw.window());
    }
    std::vector<double> losses(ws.size());
    threads = std::max(1u, std::min<unsigned>(threads, unsigned(std::max<std::size_t>(ws.size(), 1))));
    auto work = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) losses[i] = scorer_.score(ws[i]);
    };
    if (threads == 1) {
      work(0, ws.size());
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (ws.size() + threads - 1) / threads;
      for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back(work, std::min(ws.size(), t * chunk), std::min(ws.size(), (t + 1) * chunk));
      for (auto& th : pool) th.join();
    }
    std::vector<Verdict> out;
    out.reserve(ws.size());
    for (std::size_t i = 0; i < ws.size(); ++i) {
      if (!std::isfinite(losses[i])) fail(Errc::NonFinite, "scorer produced a non-finite loss");
      out.push_back(route(losses[i], rows[i], first_index + std::int64_t(i)));
    }
    return out;
  }

  void set_sink(EngineSink* sink) { sink_ptr_ = sink; }

  const EngineConfig& config() const { return config_; }
  Phase phase() const { return phase_; }
  bool bootstrapped() const { return bootstrapped_; }
  const ThresholdPair& thresholds() const { return thresholds_; }
  const LossBuffer& normal_losses() const { return normal_losses_; }
  const LossBuffer& abnormal_losses() const { return abnormal_losses_; }
  const Scorer& scorer() const { return scorer_; }
  const std::optional<RandomForest>& forest() const { return forest_; }
  std::size_t samples_seen() const { return seen_; }
  std::size_t batch_size() const { return batch_; }
  std::size_t retrains() const { return retrains_; }
  std::size_t pending_normal_windows() const { return pending_normal_.size(); }
  std::size_t pending_labelled() const { return pending_xy_.size(); }

 private:
  EngineSink* sink_() const { return sink_ptr_; }

  std::vector<SequenceWindow> windows_of(std::span<const std::vector<double>> rows) const {
    std::vector<SequenceWindow> out;
    SlidingWindow sw(timestep_, dims_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sw.push(rows[i], std::int64_t(i));
      if (sw.full()) out.push_back(sw.window());
    }
    return out;
  }

  double checked_score(const SequenceWindow& w) const {
    const double loss = scorer_.score(w);
    if (!std::isfinite(loss)) fail(Errc::NonFinite, "scorer produced a non-finite loss");
    return loss;
  }

  // Route a scored record with the current thresholds and forest.
  Verdict route(double loss, std::span<const double> features, std::int64_t index) const {
    Verdict v;
    v.index = index;
    v.loss = loss;
    v.t1 = thresholds_.t1;
    v.t2 = thresholds_.t2;
    const double t1 = thresholds_.t1;
    auto below = [&](double t) { return t > 0 && loss >= 0 ? std::clamp(loss / t, 0.0, 1.0) : 0.5; };
    auto above = [&](double t) { return t > 0 && loss > 0 ? std::clamp(1.0 - t / loss, 0.0, 1.0) : 0.5; };

    if (phase_ == Phase::Initial) {
      if (loss < t1) {
        v.route = Route::HighConfNormal;
        v.label = Label::Normal;
        v.score = below(t1) / 3.0;
      } else {
        v.route = Route::HighConfAbnormal;
        v.label = Label::Abnormal;
        v.score = (2.0 + above(t1)) / 3.0;
      }
      return v;
    }
    const double t2 = *thresholds_.t2;
    if (loss < t1) {
      v.route = Route::HighConfNormal;
      v.label = Label::Normal;
      v.score = below(t1) / 3.0;
    } else if (loss > t2) {
      v.route = Route::HighConfAbnormal;
      v.label = Label::Abnormal;
      v.score = (2.0 + above(t2)) / 3.0;
    } else {
      v.route = Route::Classifier;
      if (forest_) {
        const auto p = forest_->predict(features);
        v.label = p.label;
        v.votes = p.votes;
        v.score = (1.0 + p.abnormal_fraction()) / 3.0;
      } else {
        v.label = loss >= (t1 + t2) / 2.0 ? Label::Abnormal : Label::Normal;
        v.score = (1.0 + (t2 > t1 ? (loss - t1) / (t2 - t1) : 0.5)) / 3.0;
      }
    }
    return v;
  }

  void warn(const std::string& msg) {
    if (sink_()) sink_()->on_warning(msg);
  }

  void phase_transition(std::int64_t index) {
    if (!config_.two_layer || abnormal_losses_.size() < config_.n) return;
    try {
      const auto t = adaptive_threshold(abnormal_losses_.values(), config_.p2);
      thresholds_.t2 = t.threshold;
      thresholds_.fit_abnormal = t.fit;
    } catch (const Error& e) {
      warn(std::string("cannot fit abnormal losses at phase change, using T2 = T1: ") + e.what());
      thresholds_.t2 = thresholds_.t1;
      thresholds_.fit_abnormal.reset();
    }
    check_overlap();
    phase_ = Phase::Steady;
    if (sink_()) sink_()->on_phase_change(index, thresholds_);
  }

  void check_overlap() {
    if (thresholds_.t2 && *thresholds_.t2 <= thresholds_.t1)
      warn("T2 <= T1: the uncertain band is empty and overlapping losses resolve to normal");
  }

  void retrain(std::int64_t index) {
    RetrainReport r;
    r.retrain = retrains_ + 1;
    r.last_index = index;
    r.phase = phase_;
    r.old_t1 = thresholds_.t1;
    r.old_t2 = thresholds_.t2;

    if (config_.adapt_thresholds) {
      try {
        const auto t = adaptive_threshold(normal_losses_.values(), config_.p1);
        thresholds_.t1 = t.threshold;
        thresholds_.fit_normal = t.fit;
      } catch (const Error& e) {
        warn(std::string("keeping previous T1: ") + e.what());
      }
      if (phase_ == Phase::Steady) {
        try {
          const auto t = adaptive_threshold(abnormal_losses_.values(), config_.p2);
          thresholds_.t2 = t.threshold;
          thresholds_.fit_abnormal = t.fit;
        } catch (const Error& e) {
          warn(std::string("keeping previous T2: ") + e.what());
        }
        check_overlap();
      }
    }

    if (config_.update_scorer && !pending_normal_.empty()) {
      scorer_.train(pending_normal_, config_.update_epochs, rng_);
      r.scorer_windows = pending_normal_.size();
    }

    if (phase_ == Phase::Steady) {
      r.forest_samples = pending_xy_.size();
      try {
        forest_ = fit_forest(pending_xy_, config_.forest, config_.seed + 0x9e3779b97f4a7c15ULL * (retrains_ + 1));
        r.forest_trained = true;
      } catch (const Error& e) {
        if (e.code() != Errc::DegenerateTrainingSet) throw;
        warn(std::string("keeping previous forest: ") + e.what());
      }
    }

    pending_normal_.clear();
    pending_xy_.clear();
    batch_ = 0;
    ++retrains_;
    r.new_t1 = thresholds_.t1;
    r.new_t2 = thresholds_.t2;
    r.normal_buffer = normal_losses_.size();
    r.abnormal_buffer = abnormal_losses_.size();
    if (sink_()) sink_()->on_retrain(r);
  }

  EngineConfig config_;
  Scorer scorer_;
  std::size_t dims_;
  int timestep_;
  SlidingWindow window_;
  LossBuffer normal_losses_;
  LossBuffer abnormal_losses_;
  std::vector<SequenceWindow> pending_normal_;
  TrainingSet pending_xy_;
  std::optional<RandomForest> forest_;
  ThresholdPair thresholds_;
  Phase phase_ = Phase::Initial;
  Rng rng_;
  EngineSink* sink_ptr_ = nullptr;
  bool bootstrapped_ = false;
  std::size_t seen_ = 0;
  std::size_t batch_ = 0;
  std::size_t retrains_ = 0;
};

}  // namespace adnad
