#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfmr/types.hpp"

namespace cfmr {

// Synthetic point-annotated corpus: videos are noise with event segments
// overwritten by token-conditioned patterns, and each event is paired with a
// query naming its pattern tokens.
struct SyntheticSpec {
  int train_videos = 200;
  int test_videos = 50;
  int l_v = 48;           // frames per video
  int d_v = 8;            // feature dim
  int vocab = 40;         // word dictionary size
  int function_tokens = 4;  // leading token ids reserved as non-content words
  int events_per_video = 2;
  double event_min = 0.12;  // event length range, fraction of the video
  double event_max = 0.30;
  int phrase_min = 2;  // content tokens per event
  int phrase_max = 3;
  double noise = 0.1;
  double fps = 1.0;  // duration = l_v / fps seconds
  uint64_t seed = 1;

  void validate() const;
};

struct Corpus {
  VideoMap videos;                  // train and test videos
  std::vector<PointSample> train;   // point annotations only
  std::vector<EvalSample> test;     // full intervals, scoring only
  SyntheticSpec spec;
};

Corpus generate_corpus(const SyntheticSpec& spec);

// The per-token latent patterns the generator plants; exposed so tests can
// verify the task is solvable by nearest-pattern classification.
Mat corpus_patterns(const SyntheticSpec& spec);

// --- binary feature files ---
// magic "CFMRFEA1", little-endian: u32 l_v, u32 d_v, f32 duration seconds,
// then l_v x d_v float32 row-major.
void write_feature_file(const std::string& path, const FeatureSequence& video);
FeatureSequence read_feature_file(const std::string& path);

// --- corpus directory layout ---
// <dir>/features/<video_id>.feat, <dir>/train.jsonl, <dir>/test.jsonl,
// <dir>/corpus.json (generation metadata).
void write_corpus(const Corpus& corpus, const std::string& dir);
Corpus read_corpus(const std::string& dir);

}  // namespace cfmr
