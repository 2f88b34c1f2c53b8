#include "cfmr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cfmr/errors.hpp"

namespace cfmr {

namespace fs = std::filesystem;
using nlohmann::json;

void SyntheticSpec::validate() const {
  if (train_videos < 0 || test_videos < 0 || train_videos + test_videos < 1)
    throw ValidationError("corpus spec: need at least one video");
  if (l_v < 4 || d_v < 1) throw ValidationError("corpus spec: l_v/d_v too small");
  if (vocab < 2) throw ValidationError("corpus spec: vocabulary too small");
  if (function_tokens < 1 || function_tokens >= vocab)
    throw ValidationError("corpus spec: function token range invalid");
  if (phrase_min < 1 || phrase_max < phrase_min)
    throw ValidationError("corpus spec: phrase length range invalid");
  if (vocab - function_tokens < phrase_max)
    throw ValidationError("corpus spec: not enough content tokens for a phrase");
  if (events_per_video < 1) throw ValidationError("corpus spec: events_per_video >= 1");
  if (event_min <= 0.0 || event_max < event_min || event_max >= 1.0)
    throw ValidationError("corpus spec: event length range invalid");
  if (noise < 0.0) throw ValidationError("corpus spec: noise must be non-negative");
  if (fps <= 0.0) throw ValidationError("corpus spec: fps must be positive");
  const double worst = events_per_video * event_max +
                       0.02 * static_cast<double>(events_per_video + 1);
  if (worst > 1.0)
    throw ValidationError("corpus spec: events cannot fit disjointly (total " +
                          std::to_string(worst) + " > 1)");
}

Mat corpus_patterns(const SyntheticSpec& spec) {
  // One unit-norm direction per vocabulary entry, fixed by the corpus seed.
  Rng rng(spec.seed ^ 0xA5A5A5A5DEADBEEFULL);
  Mat patterns = rng.gaussian_matrix(spec.vocab, spec.d_v);
  for (Eigen::Index r = 0; r < patterns.rows(); ++r)
    patterns.row(r) /= patterns.row(r).norm();
  return patterns;
}

namespace {

struct Event {
  double start, end;          // normalized
  std::vector<int> phrase;    // content token ids
};

std::vector<Event> place_events(const SyntheticSpec& spec, Rng& rng) {
  const int k = spec.events_per_video;
  std::vector<double> lengths(k);
  double total = 0.0;
  for (double& len : lengths) {
    len = rng.uniform(spec.event_min, spec.event_max);
    total += len;
  }
  const double free_space = 1.0 - total;
  std::vector<double> gap_w(k + 1);
  double gap_total = 0.0;
  for (double& g : gap_w) {
    g = rng.uniform(0.2, 1.0);
    gap_total += g;
  }

  std::vector<Event> events(k);
  double at = 0.0;
  for (int i = 0; i < k; ++i) {
    at += free_space * gap_w[i] / gap_total;
    events[i].start = at;
    at += lengths[i];
    events[i].end = at;
  }

  const int content_pool = spec.vocab - spec.function_tokens;
  for (Event& ev : events) {
    const int n = spec.phrase_min +
                  static_cast<int>(rng.index(spec.phrase_max - spec.phrase_min + 1));
    std::vector<int> pool(content_pool);
    for (int i = 0; i < content_pool; ++i) pool[i] = spec.function_tokens + i;
    rng.shuffle(pool);
    ev.phrase.assign(pool.begin(), pool.begin() + n);
  }
  return events;
}

QueryTokens phrase_query(const SyntheticSpec& spec, const Event& ev, Rng& rng) {
  QueryTokens q;
  // A function token opens the query, another lands somewhere inside.
  q.ids.push_back(static_cast<int>(rng.index(spec.function_tokens)));
  q.content.push_back(0);
  const size_t insert_at = 1 + rng.index(ev.phrase.size());
  for (size_t i = 0; i < ev.phrase.size(); ++i) {
    if (q.ids.size() == insert_at) {
      q.ids.push_back(static_cast<int>(rng.index(spec.function_tokens)));
      q.content.push_back(0);
    }
    q.ids.push_back(ev.phrase[i]);
    q.content.push_back(1);
  }
  return q;
}

std::string video_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "v%05d", i);
  return buf;
}

}  // namespace

Corpus generate_corpus(const SyntheticSpec& spec) {
  spec.validate();
  const Mat patterns = corpus_patterns(spec);
  Rng rng(spec.seed);

  Corpus corpus;
  corpus.spec = spec;
  const int total_videos = spec.train_videos + spec.test_videos;
  const double duration = static_cast<double>(spec.l_v) / spec.fps;

  for (int v = 0; v < total_videos; ++v) {
    const std::string id = video_name(v);
    const bool is_train = v < spec.train_videos;

    FeatureSequence video;
    video.duration = duration;
    video.features = spec.noise > 0.0
                         ? Mat(spec.noise * rng.gaussian_matrix(spec.l_v, spec.d_v))
                         : Mat(Mat::Zero(spec.l_v, spec.d_v));

    const auto events = place_events(spec, rng);
    for (const Event& ev : events) {
      Vec pattern = Vec::Zero(spec.d_v);
      for (int tok : ev.phrase) pattern += patterns.row(tok).transpose();
      pattern /= static_cast<double>(ev.phrase.size());

      for (int i = 0; i < spec.l_v; ++i) {
        const double center = (static_cast<double>(i) + 0.5) / spec.l_v;
        if (center < ev.start || center >= ev.end) continue;
        video.features.row(i) = pattern.transpose();
        if (spec.noise > 0.0)
          for (int d = 0; d < spec.d_v; ++d)
            video.features(i, d) += spec.noise * rng.normal();
      }

      const QueryTokens query = phrase_query(spec, ev, rng);
      if (is_train) {
        corpus.train.push_back({id, query, rng.uniform(ev.start, ev.end)});
      } else {
        corpus.test.push_back({id, query, ev.start * duration, ev.end * duration});
      }
    }
    corpus.videos.emplace(id, std::move(video));
  }
  return corpus;
}

// --- feature files ---

namespace {
constexpr char kFeatureMagic[8] = {'C', 'F', 'M', 'R', 'F', 'E', 'A', '1'};
}

void write_feature_file(const std::string& path, const FeatureSequence& video) {
  if (video.features.rows() < 1)
    throw ValidationError("feature file: empty video");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open feature file for writing: " + path);
  os.write(kFeatureMagic, sizeof(kFeatureMagic));
  const uint32_t l_v = static_cast<uint32_t>(video.features.rows());
  const uint32_t d_v = static_cast<uint32_t>(video.features.cols());
  const float duration = static_cast<float>(video.duration);
  os.write(reinterpret_cast<const char*>(&l_v), sizeof(l_v));
  os.write(reinterpret_cast<const char*>(&d_v), sizeof(d_v));
  os.write(reinterpret_cast<const char*>(&duration), sizeof(duration));
  const MatF data = video.features.cast<float>();
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(sizeof(float) * data.size()));
  if (!os) throw FormatError("failed writing feature file: " + path);
}

FeatureSequence read_feature_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open feature file: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kFeatureMagic, sizeof(magic)) != 0)
    throw FormatError("not a feature file (bad magic): " + path);
  uint32_t l_v = 0, d_v = 0;
  float duration = 0.0f;
  is.read(reinterpret_cast<char*>(&l_v), sizeof(l_v));
  is.read(reinterpret_cast<char*>(&d_v), sizeof(d_v));
  is.read(reinterpret_cast<char*>(&duration), sizeof(duration));
  if (!is) throw FormatError("feature file truncated in header: " + path);
  if (l_v == 0 || d_v == 0) throw FormatError("feature file declares an empty video");

  MatF data(l_v, d_v);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(sizeof(float) * data.size()));
  if (!is) throw FormatError("feature file truncated in payload: " + path);
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("feature file has trailing data: " + path);

  FeatureSequence video;
  video.features = data.cast<double>();
  video.duration = duration;
  return video;
}

// --- corpus directories ---

namespace {

json tokens_json(const QueryTokens& q) {
  json j;
  j["tokens"] = q.ids;
  j["content"] = std::vector<int>(q.content.begin(), q.content.end());
  return j;
}

QueryTokens tokens_from_json(const json& j) {
  QueryTokens q;
  q.ids = j.at("tokens").get<std::vector<int>>();
  for (int c : j.at("content").get<std::vector<int>>())
    q.content.push_back(static_cast<uint8_t>(c != 0));
  if (q.ids.size() != q.content.size())
    throw FormatError("annotation record: tokens/content length mismatch");
  return q;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "features");
  for (const auto& [id, video] : corpus.videos)
    write_feature_file((fs::path(dir) / "features" / (id + ".feat")).string(), video);

  std::ofstream train_os(fs::path(dir) / "train.jsonl");
  for (const PointSample& s : corpus.train) {
    json j = tokens_json(s.query);
    j["video_id"] = s.video_id;
    j["point"] = s.point;
    train_os << j.dump() << "\n";
  }

  std::ofstream test_os(fs::path(dir) / "test.jsonl");
  for (const EvalSample& s : corpus.test) {
    json j = tokens_json(s.query);
    j["video_id"] = s.video_id;
    j["t_start"] = s.t_start;
    j["t_end"] = s.t_end;
    test_os << j.dump() << "\n";
  }

  json meta{{"train_videos", corpus.spec.train_videos},
            {"test_videos", corpus.spec.test_videos},
            {"l_v", corpus.spec.l_v},
            {"d_v", corpus.spec.d_v},
            {"vocab", corpus.spec.vocab},
            {"function_tokens", corpus.spec.function_tokens},
            {"events_per_video", corpus.spec.events_per_video},
            {"event_min", corpus.spec.event_min},
            {"event_max", corpus.spec.event_max},
            {"phrase_min", corpus.spec.phrase_min},
            {"phrase_max", corpus.spec.phrase_max},
            {"noise", corpus.spec.noise},
            {"fps", corpus.spec.fps},
            {"seed", corpus.spec.seed}};
  std::ofstream meta_os(fs::path(dir) / "corpus.json");
  meta_os << meta.dump(2) << "\n";
  if (!meta_os) throw FormatError("failed writing corpus metadata in " + dir);
}

Corpus read_corpus(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root / "corpus.json"))
    throw FormatError("no corpus.json under " + dir);

  Corpus corpus;
  json meta;
  {
    std::ifstream is(root / "corpus.json");
    is >> meta;
  }
  SyntheticSpec& spec = corpus.spec;
  spec.train_videos = meta.value("train_videos", 0);
  spec.test_videos = meta.value("test_videos", 0);
  spec.l_v = meta.value("l_v", 0);
  spec.d_v = meta.value("d_v", 0);
  spec.vocab = meta.value("vocab", 0);
  spec.function_tokens = meta.value("function_tokens", 1);
  spec.events_per_video = meta.value("events_per_video", 1);
  spec.event_min = meta.value("event_min", 0.1);
  spec.event_max = meta.value("event_max", 0.3);
  spec.phrase_min = meta.value("phrase_min", 1);
  spec.phrase_max = meta.value("phrase_max", 1);
  spec.noise = meta.value("noise", 0.0);
  spec.fps = meta.value("fps", 1.0);
  spec.seed = meta.value("seed", uint64_t{0});

  if (!fs::exists(root / "features"))
    throw FormatError("no features directory under " + dir);
  for (const auto& entry : fs::directory_iterator(root / "features")) {
    if (entry.path().extension() != ".feat") continue;
    corpus.videos.emplace(entry.path().stem().string(),
                          read_feature_file(entry.path().string()));
  }

  const auto read_jsonl = [](const fs::path& path, auto&& handler) {
    std::ifstream is(path);
    if (!is) return;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      handler(j);
    }
  };

  read_jsonl(root / "train.jsonl", [&](const json& j) {
    corpus.train.push_back({j.at("video_id").get<std::string>(), tokens_from_json(j),
                            j.at("point").get<double>()});
  });
  read_jsonl(root / "test.jsonl", [&](const json& j) {
    corpus.test.push_back({j.at("video_id").get<std::string>(), tokens_from_json(j),
                           j.at("t_start").get<double>(), j.at("t_end").get<double>()});
  });
  return corpus;
}

}  // namespace cfmr
