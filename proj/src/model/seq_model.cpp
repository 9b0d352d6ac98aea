#include "siaedit/model/seq_model.hpp"

#include "siaedit/errors.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace siaedit::model {

using data::TokenId;
using num::Segment;
using num::Shape;

void ModelConfig::validate() const {
  if (n_layers < 1) throw ValidationError("n_layers must be >= 1");
  if (hidden < 1 || heads < 1) throw ValidationError("hidden and heads must be >= 1");
  if (hidden % heads != 0) {
    throw ValidationError("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (ffn_mult < 1) throw ValidationError("ffn_mult must be >= 1");
  if (vocab_size < 6) throw ValidationError("vocab_size must be >= 6");
  if (max_positions < 1) throw ValidationError("max_positions must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValidationError("dropout_rate must lie in [0, 1)");
  if (!(init_std >= 0.0) || !std::isfinite(init_std)) throw ValidationError("init_std must be finite and >= 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},     {"hidden", c.hidden},
                     {"heads", c.heads},           {"ffn_mult", c.ffn_mult},
                     {"vocab_size", c.vocab_size}, {"max_positions", c.max_positions},
                     {"dropout_rate", c.dropout_rate}, {"init_std", c.init_std},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.hidden = j.value("hidden", d.hidden);
  c.heads = j.value("heads", d.heads);
  c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  c.init_std = j.value("init_std", d.init_std);
  c.seed = j.value("seed", d.seed);
}

Index parameter_count(const ModelConfig& c) {
  const Index h = c.hidden, f = c.ffn_mult * c.hidden, v = c.vocab_size, p = c.max_positions;
  const Index attn = 4 * h * h + 3 * h;  // keys carry no bias
  const Index norm = 2 * h;
  const Index ffn = h * f + f + f * h + h;
  const Index enc_layer = attn + 2 * norm + ffn;
  const Index dec_layer = 2 * attn + 3 * norm + ffn;
  return v * h + 2 * p * h + c.n_layers * (enc_layer + dec_layer) + 2 * norm + v;
}

namespace {

Tensor normal_tensor(Shape shape, double std, Rng& rng) {
  num::Values v(num::shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = std == 0.0 ? 0.0 : std * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

LayerNormParams make_norm(Index h) {
  return {Tensor::full({h}, 1.0, true), Tensor::zeros({h}, true)};
}

AttentionParams make_attention(Index h, double std, Rng& rng) {
  AttentionParams a;
  a.wq = normal_tensor({h, h}, std, rng);
  a.bq = Tensor::zeros({h}, true);
  a.wk = normal_tensor({h, h}, std, rng);
  a.wv = normal_tensor({h, h}, std, rng);
  a.bv = Tensor::zeros({h}, true);
  a.wo = normal_tensor({h, h}, std, rng);
  a.bo = Tensor::zeros({h}, true);
  return a;
}

FeedForwardParams make_ffn(Index h, Index f, double std, Rng& rng) {
  FeedForwardParams p;
  p.w1 = normal_tensor({h, f}, std, rng);
  p.b1 = Tensor::zeros({f}, true);
  p.w2 = normal_tensor({f, h}, std, rng);
  p.b2 = Tensor::zeros({h}, true);
  return p;
}

void append(std::vector<NamedParameter>& out, const std::string& prefix, const LayerNormParams& p) {
  out.push_back({prefix + ".gain", p.gain});
  out.push_back({prefix + ".bias", p.bias});
}

void append(std::vector<NamedParameter>& out, const std::string& prefix, const AttentionParams& p) {
  out.push_back({prefix + ".wq", p.wq});
  out.push_back({prefix + ".bq", p.bq});
  out.push_back({prefix + ".wk", p.wk});
  out.push_back({prefix + ".wv", p.wv});
  out.push_back({prefix + ".bv", p.bv});
  out.push_back({prefix + ".wo", p.wo});
  out.push_back({prefix + ".bo", p.bo});
}

void append(std::vector<NamedParameter>& out, const std::string& prefix, const FeedForwardParams& p) {
  out.push_back({prefix + ".w1", p.w1});
  out.push_back({prefix + ".b1", p.b1});
  out.push_back({prefix + ".w2", p.w2});
  out.push_back({prefix + ".b2", p.b2});
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return num::add(num::matmul(x, w), b); }

Tensor norm(const Tensor& x, const LayerNormParams& p) { return num::layer_norm(x, p.gain, p.bias); }

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  return linear(num::gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Tensor maybe_dropout(const Tensor& x, double rate, const ForwardOptions& opts) {
  if (!opts.train || rate == 0.0) return x;
  if (opts.rng == nullptr) throw ContractError("training forward with dropout needs an rng");
  return num::dropout(x, rate, opts.rng->engine());
}

void check_positions(Index length, Index max_positions, const char* what) {
  if (length > max_positions) {
    throw RangeError(std::string(what) + " length " + std::to_string(length) + " exceeds max_positions " +
                     std::to_string(max_positions));
  }
}

// ---- checkpoint encoding ----

constexpr char kMagic[8] = {'S', 'I', 'A', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

template <class T>
void put(std::string& buf, const T& value) {
  const char* p = reinterpret_cast<const char*>(&value);
  buf.append(p, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, std::string source) : buf_(buf), source_(std::move(source)) {}

  template <class T>
  T get() {
    T value;
    need(sizeof(T));
    std::memcpy(&value, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError(source_ + ": checkpoint is truncated");
  }

  const std::string& buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string describe_mismatch(const ModelConfig& file, const ModelConfig& want) {
  const nlohmann::json a = file, b = want;
  std::string out;
  for (const auto& [key, value] : b.items()) {
    if (a.at(key) != value) {
      if (!out.empty()) out += ", ";
      out += key + " " + a.at(key).dump() + " (file) vs " + value.dump() + " (expected)";
    }
  }
  return out;
}

}  // namespace

SeqModel::SeqModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const Index h = cfg_.hidden, f = cfg_.ffn_mult * cfg_.hidden;
  const double s = cfg_.init_std;
  token_embedding = normal_tensor({cfg_.vocab_size, h}, s, rng);
  encoder_positions = normal_tensor({cfg_.max_positions, h}, s, rng);
  decoder_positions = normal_tensor({cfg_.max_positions, h}, s, rng);
  for (Index l = 0; l < cfg_.n_layers; ++l) {
    EncoderLayer e;
    e.norm_attn = make_norm(h);
    e.self_attn = make_attention(h, s, rng);
    e.norm_ffn = make_norm(h);
    e.ffn = make_ffn(h, f, s, rng);
    encoder_layers.push_back(std::move(e));
  }
  for (Index l = 0; l < cfg_.n_layers; ++l) {
    DecoderLayer d;
    d.norm_self = make_norm(h);
    d.self_attn = make_attention(h, s, rng);
    d.norm_cross = make_norm(h);
    d.cross_attn = make_attention(h, s, rng);
    d.norm_ffn = make_norm(h);
    d.ffn = make_ffn(h, f, s, rng);
    decoder_layers.push_back(std::move(d));
  }
  encoder_norm = make_norm(h);
  decoder_norm = make_norm(h);
  output_bias = Tensor::zeros({cfg_.vocab_size}, true);
}

std::vector<NamedParameter> SeqModel::parameters() const {
  std::vector<NamedParameter> out;
  out.push_back({"token_embedding", token_embedding});
  out.push_back({"encoder_positions", encoder_positions});
  out.push_back({"decoder_positions", decoder_positions});
  for (std::size_t l = 0; l < encoder_layers.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l);
    append(out, p + ".norm_attn", encoder_layers[l].norm_attn);
    append(out, p + ".self_attn", encoder_layers[l].self_attn);
    append(out, p + ".norm_ffn", encoder_layers[l].norm_ffn);
    append(out, p + ".ffn", encoder_layers[l].ffn);
  }
  for (std::size_t l = 0; l < decoder_layers.size(); ++l) {
    const std::string p = "decoder." + std::to_string(l);
    append(out, p + ".norm_self", decoder_layers[l].norm_self);
    append(out, p + ".self_attn", decoder_layers[l].self_attn);
    append(out, p + ".norm_cross", decoder_layers[l].norm_cross);
    append(out, p + ".cross_attn", decoder_layers[l].cross_attn);
    append(out, p + ".norm_ffn", decoder_layers[l].norm_ffn);
    append(out, p + ".ffn", decoder_layers[l].ffn);
  }
  append(out, "encoder_norm", encoder_norm);
  append(out, "decoder_norm", decoder_norm);
  out.push_back({"output_bias", output_bias});
  return out;
}

Index SeqModel::parameter_count() const {
  Index n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

SeqModel SeqModel::clone() const {
  ModelConfig zero = cfg_;
  zero.init_std = 0.0;
  SeqModel copy(zero);
  copy.cfg_ = cfg_;
  const auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].tensor.mutable_values() = src[i].tensor.values();
  return copy;
}

void SeqModel::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

Tensor SeqModel::run_encoder(const std::vector<TokenId>& ids, const std::vector<Index>& positions,
                             std::span<const Segment> segments, const ForwardOptions& opts) const {
  const double rate = cfg_.dropout_rate;
  Tensor x = num::add(num::embedding(token_embedding, ids), num::embedding(encoder_positions, positions));
  x = maybe_dropout(x, rate, opts);
  for (const auto& layer : encoder_layers) {
    const Tensor h = norm(x, layer.norm_attn);
    const auto& a = layer.self_attn;
    const Tensor ctx = num::attention(linear(h, a.wq, a.bq), num::matmul(h, a.wk), linear(h, a.wv, a.bv),
                                      segments, segments, cfg_.heads, false);
    x = num::add(x, maybe_dropout(linear(ctx, a.wo, a.bo), rate, opts));
    x = num::add(x, maybe_dropout(feed_forward(norm(x, layer.norm_ffn), layer.ffn), rate, opts));
  }
  return norm(x, encoder_norm);
}

Tensor SeqModel::run_decoder(const std::vector<TokenId>& ids, const std::vector<Index>& positions,
                             std::span<const Segment> segments, const std::vector<Tensor>* cross_keys,
                             const std::vector<Tensor>* cross_values, std::span<const Segment> memory_segments,
                             const ForwardOptions& opts) const {
  const double rate = cfg_.dropout_rate;
  Tensor x = num::add(num::embedding(token_embedding, ids), num::embedding(decoder_positions, positions));
  x = maybe_dropout(x, rate, opts);
  for (std::size_t l = 0; l < decoder_layers.size(); ++l) {
    const auto& layer = decoder_layers[l];
    const Tensor h = norm(x, layer.norm_self);
    const auto& a = layer.self_attn;
    const Tensor ctx = num::attention(linear(h, a.wq, a.bq), num::matmul(h, a.wk), linear(h, a.wv, a.bv),
                                      segments, segments, cfg_.heads, true);
    x = num::add(x, maybe_dropout(linear(ctx, a.wo, a.bo), rate, opts));
    if (cross_keys != nullptr) {
      const auto& c = layer.cross_attn;
      const Tensor q = linear(norm(x, layer.norm_cross), c.wq, c.bq);
      const Tensor cctx = num::attention(q, (*cross_keys)[l], (*cross_values)[l], segments, memory_segments,
                                         cfg_.heads, false);
      x = num::add(x, maybe_dropout(linear(cctx, c.wo, c.bo), rate, opts));
    }
    x = num::add(x, maybe_dropout(feed_forward(norm(x, layer.norm_ffn), layer.ffn), rate, opts));
  }
  const Tensor out = norm(x, decoder_norm);
  const Tensor logits = num::add(num::matmul(out, num::transpose(token_embedding)), output_bias);
  return num::log_softmax(logits);
}

Tensor SeqModel::forward(const data::Batch& batch, const ForwardOptions& opts) const {
  const Index rows = batch.size();
  const Index t_len = batch.decoder_in_ids.cols();
  if (rows == 0 || t_len == 0) throw ContractError("forward: empty batch");
  check_positions(t_len, cfg_.max_positions, "decoder");

  std::vector<Tensor> keys, values;
  std::vector<Segment> memory_segments;
  const bool has_encoder = batch.encoder_ids.cols() > 0;
  if (has_encoder) {
    std::vector<TokenId> ids;
    std::vector<Index> positions;
    for (Index r = 0; r < rows; ++r) {
      const Index n = batch.encoder_length(r);
      if (n == 0) throw ContractError("forward: encoder row " + std::to_string(r) + " is empty");
      check_positions(n, cfg_.max_positions, "encoder");
      memory_segments.push_back({static_cast<Index>(ids.size()), n});
      for (Index i = 0; i < n; ++i) {
        ids.push_back(batch.encoder_ids(r, i));
        positions.push_back(i);
      }
    }
    const Tensor memory = run_encoder(ids, positions, memory_segments, opts);
    for (const auto& layer : decoder_layers) {
      const auto& c = layer.cross_attn;
      keys.push_back(num::matmul(memory, c.wk));
      values.push_back(linear(memory, c.wv, c.bv));
    }
  }

  std::vector<TokenId> ids(static_cast<std::size_t>(rows * t_len));
  std::vector<Index> positions(ids.size());
  std::vector<Segment> segments;
  for (Index r = 0; r < rows; ++r) {
    segments.push_back({r * t_len, t_len});
    for (Index t = 0; t < t_len; ++t) {
      ids[static_cast<std::size_t>(r * t_len + t)] = batch.decoder_in_ids(r, t);
      positions[static_cast<std::size_t>(r * t_len + t)] = t;
    }
  }
  const Tensor logp = run_decoder(ids, positions, segments, has_encoder ? &keys : nullptr,
                                  has_encoder ? &values : nullptr, memory_segments, opts);
  return num::reshape(logp, {rows, t_len, cfg_.vocab_size});
}

EncoderState SeqModel::encode(std::span<const TokenId> source) const {
  EncoderState state;
  if (source.empty()) return state;
  check_positions(static_cast<Index>(source.size()), cfg_.max_positions, "encoder");
  num::NoGradScope no_grad;
  std::vector<Index> positions(source.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<Index>(i);
  const Segment seg{0, static_cast<Index>(source.size())};
  state.memory = run_encoder({source.begin(), source.end()}, positions, std::span(&seg, 1), {});
  for (const auto& layer : decoder_layers) {
    const auto& c = layer.cross_attn;
    state.cross_keys.push_back(num::matmul(*state.memory, c.wk));
    state.cross_values.push_back(linear(*state.memory, c.wv, c.bv));
  }
  return state;
}

num::RowMatrix SeqModel::step_batch(const EncoderState& state,
                                    const std::vector<std::vector<TokenId>>& prefixes) const {
  if (prefixes.empty()) throw ContractError("step: no prefixes");
  const std::size_t len = prefixes.front().size();
  if (len == 0) throw ContractError("step: empty prefix");
  check_positions(static_cast<Index>(len), cfg_.max_positions, "decoder");
  num::NoGradScope no_grad;
  std::vector<TokenId> ids;
  std::vector<Index> positions;
  std::vector<Segment> segments, memory_segments;
  for (const auto& prefix : prefixes) {
    if (prefix.size() != len) throw ContractError("step: prefixes must share one length");
    if (prefix.front() != data::kBos) throw ContractError("step: prefix must start with BOS");
    segments.push_back({static_cast<Index>(ids.size()), static_cast<Index>(len)});
    memory_segments.push_back({0, state.length()});
    for (std::size_t i = 0; i < len; ++i) {
      ids.push_back(prefix[i]);
      positions.push_back(static_cast<Index>(i));
    }
  }
  const bool has_encoder = !state.empty();
  const Tensor logp = run_decoder(ids, positions, segments, has_encoder ? &state.cross_keys : nullptr,
                                  has_encoder ? &state.cross_values : nullptr, memory_segments, {});
  const auto all = logp.matrix();
  num::RowMatrix out(static_cast<Index>(prefixes.size()), cfg_.vocab_size);
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    out.row(static_cast<Index>(i)) = all.row(static_cast<Index>((i + 1) * len - 1));
  }
  return out;
}

Eigen::VectorXd SeqModel::step(const EncoderState& state, std::span<const TokenId> prefix) const {
  if (prefix.empty()) throw ContractError("step: empty prefix");
  return step_batch(state, {std::vector<TokenId>(prefix.begin(), prefix.end())}).row(0).transpose();
}

void SeqModel::save(const std::filesystem::path& path) const {
  std::string buf(kMagic, sizeof(kMagic));
  put(buf, kFormatVersion);
  const std::string header = nlohmann::json(cfg_).dump();
  put(buf, static_cast<std::uint64_t>(header.size()));
  buf += header;
  const auto params = parameters();
  put(buf, static_cast<std::uint64_t>(params.size()));
  for (const auto& p : params) {
    put(buf, static_cast<std::uint64_t>(p.name.size()));
    buf += p.name;
    put(buf, static_cast<std::uint64_t>(p.tensor.rank()));
    for (Index d : p.tensor.shape()) put(buf, static_cast<std::int64_t>(d));
    buf.append(reinterpret_cast<const char*>(p.tensor.values().data()),
               static_cast<std::size_t>(p.tensor.numel()) * sizeof(double));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

SeqModel SeqModel::load(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Reader in(buf, path.string());

  if (in.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw FormatError(path.string() + ": not a model checkpoint");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig cfg;
  try {
    cfg = nlohmann::json::parse(in.bytes(in.get<std::uint64_t>())).get<ModelConfig>();
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad config header: " + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": bad config header: " + e.what());
  }
  if (expected && !(*expected == cfg)) {
    throw FormatError(path.string() + ": config mismatch: " + describe_mismatch(cfg, *expected));
  }

  SeqModel model = [&] {
    ModelConfig zero = cfg;
    zero.init_std = 0.0;
    return SeqModel(zero);
  }();
  model.cfg_ = cfg;
  auto params = model.parameters();
  if (in.get<std::uint64_t>() != params.size()) throw FormatError(path.string() + ": parameter count mismatch");
  for (auto& p : params) {
    const std::string name = in.bytes(in.get<std::uint64_t>());
    if (name != p.name) throw FormatError(path.string() + ": expected parameter " + p.name + ", found " + name);
    const auto rank = in.get<std::uint64_t>();
    Shape shape;
    for (std::uint64_t i = 0; i < rank && i < 8; ++i) shape.push_back(in.get<std::int64_t>());
    if (shape != p.tensor.shape()) {
      throw FormatError(path.string() + ": shape mismatch for " + name + ": " + num::shape_string(shape) + " vs " +
                        num::shape_string(p.tensor.shape()));
    }
    const std::string raw = in.bytes(static_cast<std::size_t>(p.tensor.numel()) * sizeof(double));
    std::memcpy(p.tensor.mutable_values().data(), raw.data(), raw.size());
  }
  if (!in.done()) throw FormatError(path.string() + ": trailing bytes after parameters");
  return model;
}

}  // namespace siaedit::model
