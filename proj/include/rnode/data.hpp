#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rnode/errors.hpp"
#include "rnode/rng.hpp"

namespace rnode {

struct Post {
  double t = 0.0;          // normalized time in [0, 1]
  std::vector<double> x;   // feature vector
  int y = -1;              // class index; -1 marks an unlabeled post
};

// One event's ordered posts.
struct TimedSequence {
  std::string event_id;
  std::vector<Post> posts;

  std::size_t size() const { return posts.size(); }
};

struct DatasetInfo {
  std::size_t feature_width = 0;
  int num_classes = 0;
};

struct Dataset {
  DatasetInfo info;
  std::vector<TimedSequence> sequences;
};

inline void validate_sequence(const TimedSequence& seq, const DatasetInfo& info,
                              bool allow_unlabeled = false) {
  double prev = 0.0;
  for (std::size_t i = 0; i < seq.posts.size(); ++i) {
    const Post& p = seq.posts[i];
    const std::string where =
        "event '" + seq.event_id + "' post " + std::to_string(i);
    if (p.t < 0.0 || p.t > 1.0) {
      throw ValidationError(where + ": field t=" + std::to_string(p.t) +
                            " outside [0, 1]");
    }
    if (i > 0 && p.t < prev) {
      throw ValidationError(where + ": field t not nondecreasing");
    }
    if (p.x.size() != info.feature_width) {
      throw ValidationError(where + ": field x has width " +
                            std::to_string(p.x.size()) + ", expected " +
                            std::to_string(info.feature_width));
    }
    const bool labeled = p.y >= 0;
    if (!labeled && !allow_unlabeled) {
      throw ValidationError(where + ": field y missing");
    }
    if (labeled && p.y >= info.num_classes) {
      throw ValidationError(where + ": field y=" + std::to_string(p.y) +
                            " outside [0, " + std::to_string(info.num_classes) +
                            ")");
    }
    prev = p.t;
  }
}

// Min-max map onto [0, 1]; a degenerate range collapses to 0.
inline std::vector<double> normalize_times(const std::vector<double>& raw) {
  if (raw.empty()) throw ContractError("normalize_times: empty input");
  const double lo = *std::min_element(raw.begin(), raw.end());
  const double hi = *std::max_element(raw.begin(), raw.end());
  std::vector<double> out(raw.size());
  if (hi == lo) return out;
  const double inv = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - lo) * inv;
  return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

enum class SplitMode { SeenEvent, UnseenEvent, BySequence };

inline const char* split_mode_name(SplitMode m) {
  switch (m) {
    case SplitMode::SeenEvent: return "seen";
    case SplitMode::UnseenEvent: return "unseen";
    case SplitMode::BySequence: return "sequence";
  }
  return "?";
}

struct SplitSpec {
  double train = 0.6, val = 0.2, test = 0.2;
  SplitMode mode = SplitMode::SeenEvent;
  std::string held_out_event;  // UnseenEvent mode

  void validate() const {
    if (train <= 0.0 || val <= 0.0 || test <= 0.0) {
      throw ContractError("SplitSpec: ratios must be positive");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) {
      throw ContractError("SplitSpec: ratios must sum to 1");
    }
    if (mode == SplitMode::UnseenEvent && held_out_event.empty()) {
      throw ContractError("SplitSpec: unseen mode needs a held-out event id");
    }
  }
};

struct SeqSplit {
  TimedSequence train, val, test;
};

struct DataSplits {
  std::vector<TimedSequence> train, val, test;
};

// Contiguous prefix/middle/suffix by count; a post on a boundary goes to the
// later split.
inline SeqSplit chronological_split(const TimedSequence& seq,
                                    const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = seq.posts.size();
  if (n < 5) {
    throw ContractError("chronological_split: sequence '" + seq.event_id +
                        "' too small (" + std::to_string(n) + " posts, need 5)");
  }
  const auto b1 = static_cast<std::size_t>(
      std::floor(spec.train * static_cast<double>(n)));
  const auto b2 = static_cast<std::size_t>(
      std::floor((spec.train + spec.val) * static_cast<double>(n)));
  SeqSplit out;
  out.train.event_id = out.val.event_id = out.test.event_id = seq.event_id;
  out.train.posts.assign(seq.posts.begin(), seq.posts.begin() + b1);
  out.val.posts.assign(seq.posts.begin() + b1, seq.posts.begin() + b2);
  out.test.posts.assign(seq.posts.begin() + b2, seq.posts.end());
  return out;
}

// Hold one event out entirely; the last `val_fraction` of every remaining
// event goes to validation and the rest to training.
inline DataSplits unseen_event_split(const std::vector<TimedSequence>& events,
                                     const std::string& held_out,
                                     double val_fraction = 0.2) {
  if (events.size() < 2) {
    throw ContractError("unseen_event_split: need at least 2 events");
  }
  const auto it =
      std::find_if(events.begin(), events.end(),
                   [&](const TimedSequence& s) { return s.event_id == held_out; });
  if (it == events.end()) {
    throw ValidationError("unseen_event_split: unknown event id '" + held_out +
                          "'");
  }
  DataSplits out;
  out.test.push_back(*it);
  for (const auto& seq : events) {
    if (seq.event_id == held_out) continue;
    const std::size_t n = seq.posts.size();
    const auto b = static_cast<std::size_t>(
        std::floor((1.0 - val_fraction) * static_cast<double>(n)));
    TimedSequence tr{seq.event_id, {seq.posts.begin(), seq.posts.begin() + b}};
    TimedSequence va{seq.event_id, {seq.posts.begin() + b, seq.posts.end()}};
    if (!tr.posts.empty()) out.train.push_back(std::move(tr));
    if (!va.posts.empty()) out.val.push_back(std::move(va));
  }
  return out;
}

// Whole-sequence holdout: the sequence list itself is cut at floor(r*N).
inline DataSplits by_sequence_split(const std::vector<TimedSequence>& seqs,
                                    const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = seqs.size();
  if (n < 3) {
    throw ContractError("by_sequence_split: need at least 3 sequences");
  }
  const auto b1 = static_cast<std::size_t>(
      std::floor(spec.train * static_cast<double>(n)));
  const auto b2 = static_cast<std::size_t>(
      std::floor((spec.train + spec.val) * static_cast<double>(n)));
  DataSplits out;
  out.train.assign(seqs.begin(), seqs.begin() + b1);
  out.val.assign(seqs.begin() + b1, seqs.begin() + b2);
  out.test.assign(seqs.begin() + b2, seqs.end());
  return out;
}

inline DataSplits make_splits(const std::vector<TimedSequence>& seqs,
                              const SplitSpec& spec) {
  spec.validate();
  switch (spec.mode) {
    case SplitMode::SeenEvent: {
      DataSplits out;
      for (const auto& seq : seqs) {
        SeqSplit s = chronological_split(seq, spec);
        if (!s.train.posts.empty()) out.train.push_back(std::move(s.train));
        if (!s.val.posts.empty()) out.val.push_back(std::move(s.val));
        if (!s.test.posts.empty()) out.test.push_back(std::move(s.test));
      }
      return out;
    }
    case SplitMode::UnseenEvent:
      return unseen_event_split(seqs, spec.held_out_event, spec.val);
    case SplitMode::BySequence:
      return by_sequence_split(seqs, spec);
  }
  throw ContractError("make_splits: unknown mode");
}

// ---------------------------------------------------------------------------
// Synthetic gap task
// ---------------------------------------------------------------------------

// Generator for irregular sequences whose labels depend on timestamps alone:
// y_i = 1 iff t_i - t_{i-1} > gap_threshold (t_0 = 0). Features are sampled
// independently of the gaps, so they carry no label information.
struct SyntheticSpec {
  std::size_t num_sequences = 100;
  std::size_t length = 20;
  std::size_t feature_width = 4;
  double gap_threshold = 0.05;  // gamma, in (0, 1)
  double noise = 0.0;           // label flip probability
  std::uint64_t seed = 0;
};

inline std::vector<TimedSequence> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.gap_threshold <= 0.0 || spec.gap_threshold >= 1.0) {
    throw ContractError("generate_synthetic: gap threshold must be in (0, 1)");
  }
  if (spec.num_sequences == 0 || spec.length == 0 || spec.feature_width == 0) {
    throw ContractError("generate_synthetic: counts must be positive");
  }
  if (spec.noise < 0.0 || spec.noise >= 1.0) {
    throw ContractError("generate_synthetic: noise must be in [0, 1)");
  }
  Rng rng(spec.seed);
  std::vector<TimedSequence> out;
  out.reserve(spec.num_sequences);
  for (std::size_t s = 0; s < spec.num_sequences; ++s) {
    TimedSequence seq;
    seq.event_id = "synth-" + std::to_string(s);
    std::vector<double> gaps(spec.length);
    double total = 0.0;
    for (auto& g : gaps) total += (g = rng.exponential());
    seq.posts.resize(spec.length);
    double cum = 0.0;
    double prev_t = 0.0;
    for (std::size_t i = 0; i < spec.length; ++i) {
      cum += gaps[i];
      Post& p = seq.posts[i];
      p.t = std::min(cum / total, 1.0);
      p.x.resize(spec.feature_width);
      for (auto& v : p.x) v = rng.normal();
      p.y = (p.t - prev_t) > spec.gap_threshold ? 1 : 0;
      prev_t = p.t;
    }
    if (spec.noise > 0.0) {
      for (auto& p : seq.posts) {
        if (rng.uniform() < spec.noise) p.y = 1 - p.y;
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

// All inter-arrival gaps (t_0 = 0 convention), pooled over sequences.
inline std::vector<double> all_gaps(const std::vector<TimedSequence>& seqs) {
  std::vector<double> gaps;
  for (const auto& seq : seqs) {
    double prev = 0.0;
    for (const auto& p : seq.posts) {
      gaps.push_back(p.t - prev);
      prev = p.t;
    }
  }
  return gaps;
}

inline double median_gap(const std::vector<TimedSequence>& seqs) {
  std::vector<double> gaps = all_gaps(seqs);
  if (gaps.empty()) throw ContractError("median_gap: no posts");
  std::sort(gaps.begin(), gaps.end());
  const std::size_t n = gaps.size();
  return n % 2 ? gaps[n / 2] : 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]);
}

// ---------------------------------------------------------------------------
// JSONL dataset files
// ---------------------------------------------------------------------------
// First line: {"feature_width": W, "num_classes": C, "raw_times": bool}
// Then one post per line, grouped by event:
//   {"event": id, "i": position, "t": time, "x": [...], "y": class}
// With raw_times=true, t holds raw epoch seconds and every event's times are
// min-max normalized at load.

inline Dataset load_jsonl(const std::string& path, bool allow_unlabeled = false) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file: " + path);

  std::string line;
  std::size_t lineno = 0;
  auto next_json = [&](nlohmann::json& j) -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad JSON: ") + e.what(), lineno);
      }
      return true;
    }
    return false;
  };

  nlohmann::json header;
  if (!next_json(header)) throw ParseError("missing header record", 1);
  if (!header.is_object() || !header.contains("feature_width") ||
      !header.contains("num_classes")) {
    throw ParseError("header must carry feature_width and num_classes", lineno);
  }
  Dataset ds;
  ds.info.feature_width = header.at("feature_width").get<std::size_t>();
  ds.info.num_classes = header.at("num_classes").get<int>();
  const bool raw_times = header.value("raw_times", false);
  if (ds.info.feature_width == 0 || ds.info.num_classes < 2) {
    throw ParseError("header: need feature_width >= 1 and num_classes >= 2",
                     lineno);
  }

  std::vector<std::string> seen_order;
  nlohmann::json rec;
  while (next_json(rec)) {
    for (const auto& key : {"event", "i", "t", "x"}) {
      if (!rec.contains(key)) {
        throw ParseError(std::string("missing \"") + key + "\" field", lineno);
      }
    }
    if (!rec.contains("y") && !allow_unlabeled) {
      throw ParseError("missing \"y\" field", lineno);
    }
    const std::string event = rec.at("event").get<std::string>();
    if (ds.sequences.empty() || ds.sequences.back().event_id != event) {
      if (std::find(seen_order.begin(), seen_order.end(), event) !=
          seen_order.end()) {
        throw ValidationError("event '" + event +
                              "' is not contiguous (line " +
                              std::to_string(lineno) + ")");
      }
      seen_order.push_back(event);
      ds.sequences.push_back(TimedSequence{event, {}});
    }
    TimedSequence& seq = ds.sequences.back();
    const auto pos = rec.at("i").get<std::size_t>();
    if (pos != seq.posts.size()) {
      throw ParseError("position " + std::to_string(pos) +
                           " out of order within event '" + event + "'",
                       lineno);
    }
    Post p;
    p.t = rec.at("t").get<double>();
    p.x = rec.at("x").get<std::vector<double>>();
    p.y = rec.contains("y") ? rec.at("y").get<int>() : -1;
    seq.posts.push_back(std::move(p));
  }

  if (raw_times) {
    for (auto& seq : ds.sequences) {
      std::vector<double> raw(seq.posts.size());
      for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = seq.posts[i].t;
      if (!std::is_sorted(raw.begin(), raw.end())) {
        throw ValidationError("event '" + seq.event_id +
                              "': raw times not nondecreasing");
      }
      const std::vector<double> norm = normalize_times(raw);
      for (std::size_t i = 0; i < norm.size(); ++i) seq.posts[i].t = norm[i];
    }
  }
  for (const auto& seq : ds.sequences) {
    validate_sequence(seq, ds.info, allow_unlabeled);
  }
  return ds;
}

inline void save_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write dataset file: " + path);
  nlohmann::json header{{"feature_width", ds.info.feature_width},
                        {"num_classes", ds.info.num_classes},
                        {"raw_times", false}};
  out << header.dump() << '\n';
  for (const auto& seq : ds.sequences) {
    for (std::size_t i = 0; i < seq.posts.size(); ++i) {
      const Post& p = seq.posts[i];
      nlohmann::json rec{{"event", seq.event_id},
                         {"i", i},
                         {"t", p.t},
                         {"x", p.x}};
      if (p.y >= 0) rec["y"] = p.y;
      out << rec.dump() << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Minibatches
// ---------------------------------------------------------------------------

// A group of whole sequences trained in one optimizer step. Sequences keep
// their own lengths; `labels` and `mask` are flattened in sequence-major
// order to match the stacked per-position logits.
struct Minibatch {
  std::vector<TimedSequence> seqs;
  std::vector<int> labels;
  std::vector<double> mask;
};

inline Minibatch make_minibatch(std::vector<TimedSequence> seqs) {
  Minibatch b;
  b.seqs = std::move(seqs);
  for (const auto& seq : b.seqs) {
    for (const auto& p : seq.posts) {
      b.labels.push_back(p.y < 0 ? 0 : p.y);
      b.mask.push_back(p.y < 0 ? 0.0 : 1.0);
    }
  }
  return b;
}

// Group `batch_size` sequences per batch; pass an Rng to shuffle sequence
// order (training) or nullptr to keep it (evaluation).
inline std::vector<Minibatch> make_minibatches(
    const std::vector<TimedSequence>& seqs, std::size_t batch_size,
    Rng* shuffle_rng) {
  if (batch_size == 0) throw ContractError("make_minibatches: batch_size == 0");
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle_rng) shuffle_rng->shuffle(order);
  std::vector<Minibatch> out;
  for (std::size_t at = 0; at < order.size(); at += batch_size) {
    const std::size_t end = std::min(order.size(), at + batch_size);
    std::vector<TimedSequence> group;
    group.reserve(end - at);
    for (std::size_t i = at; i < end; ++i) group.push_back(seqs[order[i]]);
    out.push_back(make_minibatch(std::move(group)));
  }
  return out;
}

}  // namespace rnode
