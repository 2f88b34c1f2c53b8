#include "cfmr/index.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <thread>

#include "cfmr/encoders.hpp"
#include "cfmr/errors.hpp"
#include "cfmr/eval.hpp"

namespace cfmr {

namespace {

constexpr char kIndexMagic[8] = {'C', 'F', 'M', 'R', 'I', 'D', 'X', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw FormatError(std::string("index file truncated reading ") + what);
  return v;
}

}  // namespace

const VideoRecord* ConceptIndex::find(const std::string& video_id) const {
  for (const VideoRecord& v : videos)
    if (v.id == video_id) return &v;
  return nullptr;
}

ConceptIndex build_index(const VideoMap& videos, const AnchorParams& grid,
                         const CfmrModel& model, int threads) {
  const auto anchors = inference_anchor_grid(grid.centers, grid.v_max, grid.scales);

  ConceptIndex index;
  index.d_h = static_cast<uint32_t>(model.cfg.d_h);
  index.l_c = static_cast<uint32_t>(model.cfg.l_c);
  index.centers = static_cast<uint32_t>(grid.centers);
  index.scales = static_cast<uint32_t>(grid.scales);
  index.v_max = static_cast<float>(grid.v_max);
  index.gamma = static_cast<float>(grid.gamma);
  index.fingerprint = model.fingerprint();
  index.videos.resize(videos.size());

  std::vector<const std::pair<const std::string, FeatureSequence>*> items;
  items.reserve(videos.size());
  for (const auto& kv : videos) items.push_back(&kv);

  const auto encode_one = [&](size_t i) {
    const auto& [id, video] = *items[i];
    VideoRecord rec;
    rec.id = id;
    rec.duration = video.duration;
    rec.entries.reserve(anchors.size());
    const int l_v = static_cast<int>(video.features.rows());
    for (const GaussianAnchor& anchor : anchors) {
      const Vec dens = anchor_density(anchor, l_v, grid.gamma);
      const Mat concepts = video_concepts(model, video.features, &dens);
      rec.entries.push_back({anchor, concepts.cast<float>()});
    }
    index.videos[i] = std::move(rec);
  };

  int n_threads = threads > 0 ? threads
                              : static_cast<int>(std::min<size_t>(
                                    std::thread::hardware_concurrency(), items.size()));
  if (n_threads <= 1 || items.size() <= 1) {
    for (size_t i = 0; i < items.size(); ++i) encode_one(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_threads; ++w) {
      pool.emplace_back([&, w]() {
        for (size_t i = static_cast<size_t>(w); i < items.size();
             i += static_cast<size_t>(n_threads))
          encode_one(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  return index;
}

void save_index(const ConceptIndex& index, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open index file for writing: " + path);
  os.write(kIndexMagic, sizeof(kIndexMagic));
  write_pod<uint32_t>(os, 1);  // version
  write_pod<uint32_t>(os, index.d_h);
  write_pod<uint32_t>(os, index.l_c);
  write_pod<uint32_t>(os, index.centers);
  write_pod<uint32_t>(os, index.scales);
  write_pod<float>(os, index.v_max);
  write_pod<float>(os, index.gamma);
  write_pod<uint64_t>(os, index.fingerprint);
  write_pod<uint32_t>(os, static_cast<uint32_t>(index.videos.size()));
  for (const VideoRecord& v : index.videos) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(v.id.size()));
    os.write(v.id.data(), static_cast<std::streamsize>(v.id.size()));
    write_pod<float>(os, static_cast<float>(v.duration));
    write_pod<uint32_t>(os, static_cast<uint32_t>(v.entries.size()));
    for (const IndexEntry& e : v.entries) {
      write_pod<float>(os, static_cast<float>(e.anchor.center));
      write_pod<float>(os, static_cast<float>(e.anchor.width));
      write_pod<uint32_t>(os, static_cast<uint32_t>(e.anchor.scale));
      os.write(reinterpret_cast<const char*>(e.concepts.data()),
               static_cast<std::streamsize>(sizeof(float) * e.concepts.size()));
    }
  }
  if (!os) throw FormatError("failed writing index file: " + path);
}

ConceptIndex load_index(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open index file: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kIndexMagic, sizeof(magic)) != 0)
    throw FormatError("not an index file (bad magic): " + path);
  if (read_pod<uint32_t>(is, "version") != 1)
    throw FormatError("unsupported index version");

  ConceptIndex index;
  index.d_h = read_pod<uint32_t>(is, "d_h");
  index.l_c = read_pod<uint32_t>(is, "l_c");
  index.centers = read_pod<uint32_t>(is, "centers");
  index.scales = read_pod<uint32_t>(is, "scales");
  index.v_max = read_pod<float>(is, "v_max");
  index.gamma = read_pod<float>(is, "gamma");
  index.fingerprint = read_pod<uint64_t>(is, "fingerprint");
  const auto video_count = read_pod<uint32_t>(is, "video count");
  index.videos.resize(video_count);

  const size_t concept_elems = static_cast<size_t>(index.l_c) * index.d_h;
  for (VideoRecord& v : index.videos) {
    const auto id_len = read_pod<uint32_t>(is, "video id length");
    v.id.resize(id_len);
    is.read(v.id.data(), id_len);
    if (!is) throw FormatError("index file truncated reading video id");
    v.duration = read_pod<float>(is, "duration");
    const auto entry_count = read_pod<uint32_t>(is, "entry count");
    if (entry_count != index.centers * index.scales)
      throw FormatError("index entry count does not match the header grid");
    v.entries.resize(entry_count);
    for (IndexEntry& e : v.entries) {
      e.anchor.center = read_pod<float>(is, "anchor center");
      e.anchor.width = read_pod<float>(is, "anchor width");
      e.anchor.scale = static_cast<int>(read_pod<uint32_t>(is, "anchor scale"));
      e.concepts.resize(index.l_c, index.d_h);
      is.read(reinterpret_cast<char*>(e.concepts.data()),
              static_cast<std::streamsize>(sizeof(float) * concept_elems));
      if (!is) throw FormatError("index file truncated reading concepts");
    }
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("index file has trailing data");

  // Every video must carry the same grid the header declares.
  const auto grid = inference_anchor_grid(static_cast<int>(index.centers),
                                          index.v_max, static_cast<int>(index.scales));
  for (const VideoRecord& v : index.videos) {
    for (size_t i = 0; i < v.entries.size(); ++i) {
      if (static_cast<float>(grid[i].center) !=
              static_cast<float>(v.entries[i].anchor.center) ||
          static_cast<float>(grid[i].width) !=
              static_cast<float>(v.entries[i].anchor.width))
        throw FormatError("index anchor geometry differs from the header grid");
    }
  }
  return index;
}

std::vector<RankedMoment> greedy_nms(std::vector<RankedMoment> moments,
                                     double iou_threshold) {
  if (iou_threshold >= 1.0) return moments;
  std::vector<RankedMoment> kept;
  for (const RankedMoment& cand : moments) {
    bool suppressed = false;
    for (const RankedMoment& k : kept) {
      if (k.video_id != cand.video_id) continue;
      if (iou({k.t_start, k.t_end}, {cand.t_start, cand.t_end}) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

std::vector<RankedMoment> query_index(const ConceptIndex& index, const CfmrModel& model,
                                      const QueryTokens& query, const std::string& video_id,
                                      int k, double nms_iou, SimMode mode) {
  if (k < 1) throw ValidationError("query: k must be >= 1");
  if (model.fingerprint() != index.fingerprint)
    throw FormatError("stale index: model fingerprint mismatch");
  if (static_cast<uint32_t>(model.cfg.d_h) != index.d_h ||
      static_cast<uint32_t>(model.cfg.l_c) != index.l_c)
    throw FormatError("index dimensions do not match the model");

  const Mat c_q = text_concepts(model, query);

  std::vector<const VideoRecord*> scope;
  if (video_id.empty()) {
    for (const VideoRecord& v : index.videos) scope.push_back(&v);
  } else {
    const VideoRecord* v = index.find(video_id);
    if (!v) throw ValidationError("query: unknown video id " + video_id);
    scope.push_back(v);
  }

  std::vector<std::pair<RankedMoment, const GaussianAnchor*>> scored;
  for (const VideoRecord* v : scope) {
    for (const IndexEntry& e : v->entries) {
      const Mat c_v = e.concepts.cast<double>();
      const auto [t_s, t_e] = anchor_to_interval(e.anchor, v->duration);
      scored.push_back({{v->id, t_s, t_e, sim(c_v, c_q, mode)}, &e.anchor});
    }
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first.score != b.first.score) return a.first.score > b.first.score;
    if (a.first.video_id != b.first.video_id) return a.first.video_id < b.first.video_id;
    if (a.second->center != b.second->center) return a.second->center < b.second->center;
    return a.second->width < b.second->width;
  });

  std::vector<RankedMoment> moments;
  moments.reserve(scored.size());
  for (const auto& [m, anchor] : scored) moments.push_back(m);
  moments = greedy_nms(std::move(moments), nms_iou);
  if (static_cast<int>(moments.size()) > k) moments.resize(k);
  return moments;
}

}  // namespace cfmr
