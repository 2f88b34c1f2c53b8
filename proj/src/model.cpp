#include "cfmr/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "cfmr/errors.hpp"

namespace cfmr {

void EncoderConfig::validate() const {
  if (d_h < 1 || layers < 1 || dec_layers < 1 || heads < 1 || ff_dim < 1 || l_v < 1 ||
      l_q < 1 || l_c < 1 || d_v < 1 || d_q < 1 || vocab < 2)
    throw ValidationError("encoder config: all dimensions must be positive");
  if (d_h % heads != 0)
    throw ValidationError("encoder config: d_h " + std::to_string(d_h) +
                          " not divisible by heads " + std::to_string(heads));
  if (l_c > d_h)
    throw ValidationError("encoder config: l_c must not exceed d_h");
}

namespace {

Mat xavier(Rng& rng, int rows, int cols) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return rng.matrix(rows, cols, -bound, bound);
}

void init_linear(Rng& rng, Param& w, Param& b, const std::string& name, int in, int out) {
  w = Param(name + ".w", xavier(rng, in, out));
  b = Param(name + ".b", Mat::Zero(1, out));
}

void init_layer_norm(Param& gamma, Param& beta, const std::string& name, int dim) {
  gamma = Param(name + ".gamma", Mat::Ones(1, dim));
  beta = Param(name + ".beta", Mat::Zero(1, dim));
}

void init_encoder_layer(Rng& rng, EncoderLayerParams& l, const std::string& name,
                        const EncoderConfig& cfg) {
  init_layer_norm(l.ln1_gamma, l.ln1_beta, name + ".ln1", cfg.d_h);
  init_linear(rng, l.wq, l.bq, name + ".q", cfg.d_h, cfg.d_h);
  init_linear(rng, l.wk, l.bk, name + ".k", cfg.d_h, cfg.d_h);
  init_linear(rng, l.wv, l.bv, name + ".v", cfg.d_h, cfg.d_h);
  init_linear(rng, l.wo, l.bo, name + ".o", cfg.d_h, cfg.d_h);
  init_layer_norm(l.ln2_gamma, l.ln2_beta, name + ".ln2", cfg.d_h);
  init_linear(rng, l.ff1_w, l.ff1_b, name + ".ff1", cfg.d_h, cfg.ff_dim);
  init_linear(rng, l.ff2_w, l.ff2_b, name + ".ff2", cfg.ff_dim, cfg.d_h);
}

void init_decoder_layer(Rng& rng, DecoderLayerParams& l, const std::string& name,
                        const EncoderConfig& cfg) {
  init_layer_norm(l.ln1_gamma, l.ln1_beta, name + ".ln1", cfg.d_h);
  init_linear(rng, l.self_wq, l.self_bq, name + ".self.q", cfg.d_h, cfg.d_h);
  init_linear(rng, l.self_wk, l.self_bk, name + ".self.k", cfg.d_h, cfg.d_h);
  init_linear(rng, l.self_wv, l.self_bv, name + ".self.v", cfg.d_h, cfg.d_h);
  init_linear(rng, l.self_wo, l.self_bo, name + ".self.o", cfg.d_h, cfg.d_h);
  init_layer_norm(l.ln2_gamma, l.ln2_beta, name + ".ln2", cfg.d_h);
  init_linear(rng, l.cross_wq, l.cross_bq, name + ".cross.q", cfg.d_h, cfg.d_h);
  init_linear(rng, l.cross_wk, l.cross_bk, name + ".cross.k", cfg.d_h, cfg.d_h);
  init_linear(rng, l.cross_wv, l.cross_bv, name + ".cross.v", cfg.d_h, cfg.d_h);
  init_linear(rng, l.cross_wo, l.cross_bo, name + ".cross.o", cfg.d_h, cfg.d_h);
  init_layer_norm(l.ln3_gamma, l.ln3_beta, name + ".ln3", cfg.d_h);
  init_linear(rng, l.ff1_w, l.ff1_b, name + ".ff1", cfg.d_h, cfg.ff_dim);
  init_linear(rng, l.ff2_w, l.ff2_b, name + ".ff2", cfg.ff_dim, cfg.d_h);
}

void init_mlp(Rng& rng, MlpParams& m, const std::string& name, const EncoderConfig& cfg) {
  init_linear(rng, m.w1, m.b1, name + ".1", cfg.d_h, cfg.d_h);
  init_linear(rng, m.w2, m.b2, name + ".2", cfg.d_h, cfg.l_c * cfg.d_h);
}

void collect_layer(std::vector<Param*>& out, EncoderLayerParams& l) {
  for (Param* p : {&l.ln1_gamma, &l.ln1_beta, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv,
                   &l.wo, &l.bo, &l.ln2_gamma, &l.ln2_beta, &l.ff1_w, &l.ff1_b, &l.ff2_w,
                   &l.ff2_b})
    out.push_back(p);
}

void collect_layer(std::vector<Param*>& out, DecoderLayerParams& l) {
  for (Param* p :
       {&l.ln1_gamma, &l.ln1_beta, &l.self_wq, &l.self_bq, &l.self_wk, &l.self_bk,
        &l.self_wv, &l.self_bv, &l.self_wo, &l.self_bo, &l.ln2_gamma, &l.ln2_beta,
        &l.cross_wq, &l.cross_bq, &l.cross_wk, &l.cross_bk, &l.cross_wv, &l.cross_bv,
        &l.cross_wo, &l.cross_bo, &l.ln3_gamma, &l.ln3_beta, &l.ff1_w, &l.ff1_b, &l.ff2_w,
        &l.ff2_b})
    out.push_back(p);
}

}  // namespace

CfmrModel CfmrModel::init(const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  CfmrModel m;
  m.cfg = cfg;
  m.token_embedding = Param("token_embedding", xavier(rng, cfg.vocab + 1, cfg.d_q));
  m.cls_text = Param("cls_text", xavier(rng, 1, cfg.d_q));
  m.cls_video = Param("cls_video", xavier(rng, 1, cfg.d_v));
  init_linear(rng, m.text_proj_w, m.text_proj_b, "text_proj", cfg.d_q, cfg.d_h);
  init_linear(rng, m.video_proj_w, m.video_proj_b, "video_proj", cfg.d_v, cfg.d_h);
  init_linear(rng, m.dec_proj_w, m.dec_proj_b, "dec_proj", cfg.d_q, cfg.d_h);
  m.pos_text = Param("pos_text", xavier(rng, cfg.l_q + 1, cfg.d_h));
  m.pos_video = Param("pos_video", xavier(rng, cfg.l_v + 1, cfg.d_h));
  m.pos_dec = Param("pos_dec", xavier(rng, cfg.l_q, cfg.d_h));
  m.text_layers.resize(cfg.layers);
  m.video_layers.resize(cfg.layers);
  for (int i = 0; i < cfg.layers; ++i) {
    init_encoder_layer(rng, m.text_layers[i], "text." + std::to_string(i), cfg);
    init_encoder_layer(rng, m.video_layers[i], "video." + std::to_string(i), cfg);
  }
  m.dec_layers.resize(cfg.dec_layers);
  for (int i = 0; i < cfg.dec_layers; ++i)
    init_decoder_layer(rng, m.dec_layers[i], "dec." + std::to_string(i), cfg);
  init_mlp(rng, m.mlp_text, "mlp_text", cfg);
  init_mlp(rng, m.mlp_video, "mlp_video", cfg);
  init_linear(rng, m.out_proj_w, m.out_proj_b, "out_proj", cfg.d_h, cfg.vocab);
  return m;
}

std::vector<Param*> CfmrModel::parameters() {
  std::vector<Param*> out;
  for (Param* p : {&token_embedding, &cls_text, &cls_video, &text_proj_w, &text_proj_b,
                   &video_proj_w, &video_proj_b, &dec_proj_w, &dec_proj_b, &pos_text,
                   &pos_video, &pos_dec})
    out.push_back(p);
  for (auto& l : text_layers) collect_layer(out, l);
  for (auto& l : video_layers) collect_layer(out, l);
  for (auto& l : dec_layers) collect_layer(out, l);
  for (Param* p : {&mlp_text.w1, &mlp_text.b1, &mlp_text.w2, &mlp_text.b2, &mlp_video.w1,
                   &mlp_video.b1, &mlp_video.w2, &mlp_video.b2, &out_proj_w, &out_proj_b})
    out.push_back(p);
  return out;
}

std::vector<const Param*> CfmrModel::parameters() const {
  auto mutable_params = const_cast<CfmrModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

int64_t CfmrModel::parameter_count() const {
  int64_t n = 0;
  for (const Param* p : parameters()) n += p->value.size();
  return n;
}

void CfmrModel::zero_grads() {
  for (Param* p : parameters()) p->zero_grad();
}

namespace {

struct Fnv1a {
  uint64_t h = 1469598103934665603ULL;
  void feed(const void* data, size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  template <typename T>
  void feed_value(T v) {
    feed(&v, sizeof(v));
  }
};

constexpr char kModelMagic[8] = {'C', 'F', 'M', 'R', 'M', 'D', 'L', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw FormatError(std::string("model file truncated reading ") + what);
  return v;
}

}  // namespace

uint64_t CfmrModel::fingerprint() const {
  Fnv1a f;
  f.feed_value<int32_t>(cfg.d_h);
  f.feed_value<int32_t>(cfg.layers);
  f.feed_value<int32_t>(cfg.dec_layers);
  f.feed_value<int32_t>(cfg.heads);
  f.feed_value<int32_t>(cfg.ff_dim);
  f.feed_value<int32_t>(cfg.l_v);
  f.feed_value<int32_t>(cfg.l_q);
  f.feed_value<int32_t>(cfg.l_c);
  f.feed_value<int32_t>(cfg.d_v);
  f.feed_value<int32_t>(cfg.d_q);
  f.feed_value<int32_t>(cfg.vocab);
  for (const Param* p : parameters())
    f.feed(p->value.data(), sizeof(double) * static_cast<size_t>(p->value.size()));
  return f.h;
}

void CfmrModel::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open model file for writing: " + path);
  os.write(kModelMagic, sizeof(kModelMagic));
  write_pod<uint32_t>(os, 1);  // version
  for (int v : {cfg.d_h, cfg.layers, cfg.dec_layers, cfg.heads, cfg.ff_dim, cfg.l_v,
                cfg.l_q, cfg.l_c, cfg.d_v, cfg.d_q, cfg.vocab})
    write_pod<int32_t>(os, static_cast<int32_t>(v));
  const auto params = parameters();
  write_pod<uint32_t>(os, static_cast<uint32_t>(params.size()));
  for (const Param* p : params) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(p->value.rows()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(p->value.cols()));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(sizeof(double) * p->value.size()));
  }
  if (!os) throw FormatError("failed writing model file: " + path);
}

CfmrModel CfmrModel::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open model file: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw FormatError("not a model file (bad magic): " + path);
  const auto version = read_pod<uint32_t>(is, "version");
  if (version != 1) throw FormatError("unsupported model version");
  EncoderConfig cfg;
  cfg.d_h = read_pod<int32_t>(is, "d_h");
  cfg.layers = read_pod<int32_t>(is, "layers");
  cfg.dec_layers = read_pod<int32_t>(is, "dec_layers");
  cfg.heads = read_pod<int32_t>(is, "heads");
  cfg.ff_dim = read_pod<int32_t>(is, "ff_dim");
  cfg.l_v = read_pod<int32_t>(is, "l_v");
  cfg.l_q = read_pod<int32_t>(is, "l_q");
  cfg.l_c = read_pod<int32_t>(is, "l_c");
  cfg.d_v = read_pod<int32_t>(is, "d_v");
  cfg.d_q = read_pod<int32_t>(is, "d_q");
  cfg.vocab = read_pod<int32_t>(is, "vocab");

  CfmrModel m = CfmrModel::init(cfg, 0);
  auto params = m.parameters();
  const auto count = read_pod<uint32_t>(is, "param count");
  if (count != params.size()) throw FormatError("model file parameter count mismatch");
  for (Param* p : params) {
    const auto name_len = read_pod<uint32_t>(is, "param name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != p->name) throw FormatError("model file parameter order mismatch");
    const auto rows = read_pod<uint32_t>(is, "param rows");
    const auto cols = read_pod<uint32_t>(is, "param cols");
    if (rows != static_cast<uint32_t>(p->value.rows()) ||
        cols != static_cast<uint32_t>(p->value.cols()))
      throw FormatError("model file parameter shape mismatch for " + name);
    is.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(sizeof(double) * p->value.size()));
    if (!is) throw FormatError("model file truncated reading " + name);
  }
  return m;
}

}  // namespace cfmr
