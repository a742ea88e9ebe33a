#include "bitref/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bitref/errors.hpp"
#include "bitref/random.hpp"

namespace bitref::nn {

using Eigen::Index;

std::size_t ParamLayout::add(std::string name, std::size_t rows, std::size_t cols,
                             std::size_t align) {
  if (align > 1) total_ = (total_ + align - 1) / align * align;
  tensors_.push_back(TensorInfo{std::move(name), rows, cols, total_});
  total_ += rows * cols;
  return tensors_.size() - 1;
}

void PackedBatch::add_source(const TokenSeq& ids, const std::vector<std::int32_t>& pos,
                             const std::vector<std::uint8_t>& lang) {
  enc_off.push_back(enc_ids.size());
  enc_len.push_back(ids.size());
  enc_ids.insert(enc_ids.end(), ids.begin(), ids.end());
  enc_pos.insert(enc_pos.end(), pos.begin(), pos.end());
  enc_lang.insert(enc_lang.end(), lang.begin(), lang.end());
}

void PackedBatch::add_target(const TokenSeq& target, double w) {
  dec_off.push_back(dec_in.size());
  dec_len.push_back(target.size() + 1);
  dec_in.push_back(special::kBos);
  dec_in.insert(dec_in.end(), target.begin(), target.end());
  dec_out.insert(dec_out.end(), target.begin(), target.end());
  dec_out.push_back(special::kEos);
  weight.push_back(w);
}

namespace {

constexpr double kNormEps = 1e-5;

struct Seg {
  Index q_off, q_len, k_off, k_len;
};

template <class T>
Mat<T> linear(const Mat<T>& x, const ConstMatMap<T>& w, const ConstMatMap<T>& b) {
  Mat<T> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// Accumulates dW, db; returns dx.
template <class T>
Mat<T> linear_back(const Mat<T>& x, const ConstMatMap<T>& w, const Mat<T>& dy, MatMap<T> dw,
                   MatMap<T> db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  Mat<T> dx(dy.rows(), w.rows());
  dx.noalias() = dy * w.transpose();
  return dx;
}

template <class T>
Mat<T> norm_apply(const Mat<T>& x, const ConstMatMap<T>& g, const ConstMatMap<T>& b) {
  Mat<T> y(x.rows(), x.cols());
  const T n = static_cast<T>(x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).sum() / n;
    const T var = (x.row(r).array() - mean).square().sum() / n;
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
    y.row(r) = ((x.row(r).array() - mean) * rstd * g.row(0).array() + b.row(0).array()).matrix();
  }
  return y;
}

template <class T>
struct LayerNorm {
  Mat<T> xhat;
  std::vector<T> rstd;

  Mat<T> forward(const Mat<T>& x, const ConstMatMap<T>& g, const ConstMatMap<T>& b) {
    const Index n = x.cols();
    xhat.resize(x.rows(), n);
    rstd.resize(static_cast<std::size_t>(x.rows()));
    Mat<T> y(x.rows(), n);
    for (Index r = 0; r < x.rows(); ++r) {
      const T mean = x.row(r).sum() / static_cast<T>(n);
      const T var = (x.row(r).array() - mean).square().sum() / static_cast<T>(n);
      const T rs = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
      rstd[static_cast<std::size_t>(r)] = rs;
      xhat.row(r) = (x.row(r).array() - mean) * rs;
      y.row(r) = (xhat.row(r).array() * g.row(0).array() + b.row(0).array()).matrix();
    }
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const ConstMatMap<T>& g, MatMap<T> dg, MatMap<T> db) const {
    dg.row(0) += dy.cwiseProduct(xhat).colwise().sum();
    db.row(0) += dy.colwise().sum();
    Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
    const T n = static_cast<T>(dy.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Index r = 0; r < dy.rows(); ++r) {
      const T m1 = dxhat.row(r).sum() / n;
      const T m2 = dxhat.row(r).dot(xhat.row(r)) / n;
      dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) *
                  rstd[static_cast<std::size_t>(r)];
    }
    return dx;
  }
};

template <class T>
struct Dropout {
  Mat<T> mask;
  bool active = false;

  void apply(Mat<T>& x, double p, Rng* rng) {
    active = p > 0.0 && rng != nullptr;
    if (!active) return;
    mask.resize(x.rows(), x.cols());
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    T* m = mask.data();
    for (Index i = 0; i < mask.size(); ++i) m[i] = rng->uniform() < p ? T(0) : keep;
    x.array() *= mask.array();
  }
  void backward(Mat<T>& dx) const {
    if (active) dx.array() *= mask.array();
  }
};

// In-place row softmax over the first `valid(r)` columns; the rest become 0.
template <class T, class Valid>
void softmax_rows(Mat<T>& s, Valid valid) {
  for (Index r = 0; r < s.rows(); ++r) {
    const Index n = valid(r);
    T mx = -std::numeric_limits<T>::infinity();
    for (Index c = 0; c < n; ++c) mx = std::max(mx, s(r, c));
    T sum = 0;
    for (Index c = 0; c < n; ++c) {
      s(r, c) = std::exp(s(r, c) - mx);
      sum += s(r, c);
    }
    for (Index c = 0; c < n; ++c) s(r, c) /= sum;
    for (Index c = n; c < s.cols(); ++c) s(r, c) = 0;
  }
}

template <class T>
using Ids = typename Transformer<T>::AttnIds;

template <class T>
struct Attention {
  Mat<T> q, k, v, ctx;
  std::vector<Mat<T>> probs;
  std::vector<Mat<T>> masks;

  Mat<T> forward(const Transformer<T>& m, const Ids<T>& id, const Mat<T>& xq, const Mat<T>& xkv,
                 const std::vector<Seg>& segs, bool causal, double p_attn, Rng* rng) {
    const Index heads = static_cast<Index>(m.arch().heads);
    const Index dh = static_cast<Index>(m.arch().dim) / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    q = linear(xq, m.param(id.wq), m.param(id.bq));
    k = linear(xkv, m.param(id.wk), m.param(id.bk));
    v = linear(xkv, m.param(id.wv), m.param(id.bv));
    ctx.setZero(xq.rows(), xq.cols());
    probs.assign(segs.size() * static_cast<std::size_t>(heads), Mat<T>());
    const bool drop = p_attn > 0.0 && rng != nullptr;
    masks.assign(drop ? probs.size() : 0, Mat<T>());
    const T keep = static_cast<T>(1.0 / (1.0 - p_attn));
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const Seg& g = segs[s];
      for (Index h = 0; h < heads; ++h) {
        auto Q = q.block(g.q_off, h * dh, g.q_len, dh);
        auto K = k.block(g.k_off, h * dh, g.k_len, dh);
        auto V = v.block(g.k_off, h * dh, g.k_len, dh);
        Mat<T>& P = probs[s * heads + h];
        P.noalias() = (Q * K.transpose()) * scale;
        if (causal) {
          softmax_rows(P, [](Index r) { return r + 1; });
        } else {
          softmax_rows(P, [&](Index) { return g.k_len; });
        }
        if (drop) {
          Mat<T>& M = masks[s * heads + h];
          M.resize(P.rows(), P.cols());
          for (Index i = 0; i < M.size(); ++i) M.data()[i] = rng->uniform() < p_attn ? T(0) : keep;
          ctx.block(g.q_off, h * dh, g.q_len, dh).noalias() = P.cwiseProduct(M) * V;
        } else {
          ctx.block(g.q_off, h * dh, g.q_len, dh).noalias() = P * V;
        }
      }
    }
    return linear(ctx, m.param(id.wo), m.param(id.bo));
  }

  // Accumulates into dxq and dxkv (which may alias).
  template <class GradFn>
  void backward(const Transformer<T>& m, const Ids<T>& id, GradFn G, const Mat<T>& dout,
                const Mat<T>& xq, const Mat<T>& xkv, const std::vector<Seg>& segs, Mat<T>& dxq,
                Mat<T>& dxkv) const {
    const Index heads = static_cast<Index>(m.arch().heads);
    const Index dh = static_cast<Index>(m.arch().dim) / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const Mat<T> dctx = linear_back(ctx, m.param(id.wo), dout, G(id.wo), G(id.bo));
    Mat<T> dq = Mat<T>::Zero(q.rows(), q.cols());
    Mat<T> dk = Mat<T>::Zero(k.rows(), k.cols());
    Mat<T> dv = Mat<T>::Zero(v.rows(), v.cols());
    Mat<T> dP, dS;
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const Seg& g = segs[s];
      for (Index h = 0; h < heads; ++h) {
        const Mat<T>& P = probs[s * heads + h];
        auto Q = q.block(g.q_off, h * dh, g.q_len, dh);
        auto K = k.block(g.k_off, h * dh, g.k_len, dh);
        auto V = v.block(g.k_off, h * dh, g.k_len, dh);
        auto dC = dctx.block(g.q_off, h * dh, g.q_len, dh);
        dP.noalias() = dC * V.transpose();
        if (!masks.empty()) {
          const Mat<T>& M = masks[s * heads + h];
          dv.block(g.k_off, h * dh, g.k_len, dh).noalias() += P.cwiseProduct(M).transpose() * dC;
          dP.array() *= M.array();
        } else {
          dv.block(g.k_off, h * dh, g.k_len, dh).noalias() += P.transpose() * dC;
        }
        const auto rows = (dP.cwiseProduct(P)).rowwise().sum();
        dS = (P.array() * (dP.colwise() - rows).array()).matrix();
        dq.block(g.q_off, h * dh, g.q_len, dh).noalias() = (dS * K) * scale;
        dk.block(g.k_off, h * dh, g.k_len, dh).noalias() += (dS.transpose() * Q) * scale;
      }
    }
    dxq += linear_back(xq, m.param(id.wq), dq, G(id.wq), G(id.bq));
    dxkv += linear_back(xkv, m.param(id.wk), dk, G(id.wk), G(id.bk));
    dxkv += linear_back(xkv, m.param(id.wv), dv, G(id.wv), G(id.bv));
  }
};

template <class T>
struct FeedForward {
  Mat<T> pre, hidden;
  Dropout<T> drop;

  Mat<T> forward(const Transformer<T>& m, const typename Transformer<T>::FfnIds& id,
                 const Mat<T>& x, double p, Rng* rng) {
    pre = linear(x, m.param(id.w1), m.param(id.b1));
    hidden = pre.cwiseMax(T(0));
    drop.apply(hidden, p, rng);
    return linear(hidden, m.param(id.w2), m.param(id.b2));
  }

  template <class GradFn>
  Mat<T> backward(const Transformer<T>& m, const typename Transformer<T>::FfnIds& id, GradFn G,
                  const Mat<T>& dy, const Mat<T>& x) const {
    Mat<T> dh = linear_back(hidden, m.param(id.w2), dy, G(id.w2), G(id.b2));
    drop.backward(dh);
    dh.array() *= (pre.array() > T(0)).template cast<T>();
    return linear_back(x, m.param(id.w1), dh, G(id.w1), G(id.b1));
  }
};

template <class T>
struct EncoderLayerState {
  LayerNorm<T> ln1, ln2;
  Mat<T> a, b;
  Attention<T> attn;
  FeedForward<T> ffn;
  Dropout<T> drop1, drop2;
};

template <class T>
struct DecoderLayerState {
  LayerNorm<T> ln1, ln2, ln3;
  Mat<T> a, c, f;
  Attention<T> self, cross;
  FeedForward<T> ffn;
  Dropout<T> drop1, drop2, drop3;
};

}  // namespace

template <class T>
Transformer<T>::Transformer(const Architecture& arch) : arch_(arch) {
  if (arch_.vocab <= static_cast<std::size_t>(special::kCount)) {
    fail(Errc::ConfigError, "vocabulary must extend beyond the reserved tokens");
  }
  if (arch_.dim == 0 || arch_.heads == 0 || arch_.dim % arch_.heads != 0) {
    fail(Errc::ConfigError, "dim must be a positive multiple of heads");
  }
  if (arch_.dim % 2 != 0) fail(Errc::ConfigError, "dim must be even for sinusoidal positions");
  const std::size_t d = arch_.dim, f = arch_.ffn_dim;
  tok_embed_ = layout_.add("embed.tokens", arch_.vocab, d);
  lang_embed_ = layout_.add("embed.lang", 2, d);
  auto norm = [&](const std::string& name) {
    return NormIds{layout_.add(name + ".gain", 1, d), layout_.add(name + ".bias", 1, d)};
  };
  auto attn = [&](const std::string& name) {
    AttnIds a{};
    a.wq = layout_.add(name + ".q.weight", d, d);
    a.bq = layout_.add(name + ".q.bias", 1, d);
    a.wk = layout_.add(name + ".k.weight", d, d);
    a.bk = layout_.add(name + ".k.bias", 1, d);
    a.wv = layout_.add(name + ".v.weight", d, d);
    a.bv = layout_.add(name + ".v.bias", 1, d);
    a.wo = layout_.add(name + ".out.weight", d, d);
    a.bo = layout_.add(name + ".out.bias", 1, d);
    return a;
  };
  auto ffn = [&](const std::string& name) {
    return FfnIds{layout_.add(name + ".fc1.weight", d, f), layout_.add(name + ".fc1.bias", 1, f),
                  layout_.add(name + ".fc2.weight", f, d), layout_.add(name + ".fc2.bias", 1, d)};
  };
  for (std::size_t l = 0; l < arch_.enc_layers; ++l) {
    const std::string base = "encoder.layers." + std::to_string(l);
    EncLayerIds e;
    e.ln_attn = norm(base + ".self_attn_norm");
    e.attn = attn(base + ".self_attn");
    e.ln_ffn = norm(base + ".ffn_norm");
    e.ffn = ffn(base + ".ffn");
    enc_.push_back(e);
  }
  enc_norm_ = norm("encoder.norm");
  for (std::size_t l = 0; l < arch_.dec_layers; ++l) {
    const std::string base = "decoder.layers." + std::to_string(l);
    DecLayerIds e;
    e.ln_self = norm(base + ".self_attn_norm");
    e.self = attn(base + ".self_attn");
    e.ln_cross = norm(base + ".cross_attn_norm");
    e.cross = attn(base + ".cross_attn");
    e.ln_ffn = norm(base + ".ffn_norm");
    e.ffn = ffn(base + ".ffn");
    dec_.push_back(e);
  }
  dec_norm_ = norm("decoder.norm");
  params_.assign(layout_.total(), T(0));

  positions_.resize(static_cast<Index>(arch_.max_positions), static_cast<Index>(d));
  const std::size_t half = d / 2;
  const double step = half > 1 ? std::log(10000.0) / static_cast<double>(half - 1) : 0.0;
  for (std::size_t pos = 0; pos < arch_.max_positions; ++pos) {
    for (std::size_t j = 0; j < half; ++j) {
      const double angle = static_cast<double>(pos) * std::exp(-step * static_cast<double>(j));
      positions_(static_cast<Index>(pos), static_cast<Index>(j)) = static_cast<T>(std::sin(angle));
      positions_(static_cast<Index>(pos), static_cast<Index>(j + half)) =
          static_cast<T>(std::cos(angle));
    }
  }
}

template <class T>
ConstMatMap<T> Transformer<T>::param(std::size_t id) const {
  const auto& t = layout_[id];
  return ConstMatMap<T>(params_.data() + t.offset, static_cast<Index>(t.rows),
                        static_cast<Index>(t.cols));
}

template <class T>
void Transformer<T>::init_params(std::uint64_t seed) {
  Rng rng(seed);
  const double d = static_cast<double>(arch_.dim);
  for (const auto& t : layout_.tensors()) {
    T* data = params_.data() + t.offset;
    const bool is_embed = t.name.starts_with("embed.");
    const bool is_gain = t.name.ends_with(".gain");
    const bool is_bias = t.name.ends_with(".bias");
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (is_embed) {
        data[i] = static_cast<T>(rng.normal() / std::sqrt(d));
      } else if (is_gain) {
        data[i] = T(1);
      } else if (is_bias) {
        data[i] = T(0);
      } else {
        // Xavier uniform
        const double bound = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
        data[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
      }
    }
  }
  // padding row stays zero
  std::fill_n(params_.data() + layout_[tok_embed_].offset, arch_.dim, T(0));
}

template <class T>
LossStats Transformer<T>::forward_backward(const PackedBatch& b, double label_smoothing, bool train,
                                           std::uint64_t dropout_seed,
                                           ParamVector<T>* grad) const {
  const Index d = static_cast<Index>(arch_.dim);
  const Index V = static_cast<Index>(arch_.vocab);
  const Index ne = static_cast<Index>(b.enc_ids.size());
  const Index nd = static_cast<Index>(b.dec_in.size());
  const T emb_scale = std::sqrt(static_cast<T>(d));
  const T out_scale = T(1) / emb_scale;
  Rng rng_store(dropout_seed);
  Rng* rng = train ? &rng_store : nullptr;
  const double p_drop = train ? arch_.dropout : 0.0;
  const double p_attn = train ? arch_.attn_dropout : 0.0;
  const double p_relu = train ? arch_.relu_dropout : 0.0;

  std::vector<Seg> enc_seg, dec_seg, cross_seg;
  for (std::size_t s = 0; s < b.size(); ++s) {
    const auto eo = static_cast<Index>(b.enc_off[s]), el = static_cast<Index>(b.enc_len[s]);
    const auto doff = static_cast<Index>(b.dec_off[s]), dl = static_cast<Index>(b.dec_len[s]);
    enc_seg.push_back({eo, el, eo, el});
    dec_seg.push_back({doff, dl, doff, dl});
    cross_seg.push_back({doff, dl, eo, el});
  }
  for (auto p : b.enc_pos) {
    if (p < 0 || static_cast<std::size_t>(p) >= arch_.max_positions) {
      fail(Errc::SequenceTooLong, "position beyond table");
    }
  }
  for (auto len : b.dec_len) {
    if (len > arch_.max_positions) fail(Errc::SequenceTooLong, "target beyond position table");
  }

  const auto E = param(tok_embed_);
  const auto L = param(lang_embed_);

  // encoder
  Mat<T> x(ne, d);
  for (Index r = 0; r < ne; ++r) {
    x.row(r) = E.row(b.enc_ids[r]) * emb_scale + positions_.row(b.enc_pos[r]) +
               L.row(b.enc_lang[r]);
  }
  Dropout<T> enc_in_drop;
  enc_in_drop.apply(x, p_drop, rng);
  std::vector<EncoderLayerState<T>> es(enc_.size());
  for (std::size_t l = 0; l < enc_.size(); ++l) {
    const auto& id = enc_[l];
    auto& st = es[l];
    st.a = st.ln1.forward(x, param(id.ln_attn.gain), param(id.ln_attn.bias));
    Mat<T> z = st.attn.forward(*this, id.attn, st.a, st.a, enc_seg, false, p_attn, rng);
    st.drop1.apply(z, p_drop, rng);
    x += z;
    st.b = st.ln2.forward(x, param(id.ln_ffn.gain), param(id.ln_ffn.bias));
    Mat<T> f = st.ffn.forward(*this, id.ffn, st.b, p_relu, rng);
    st.drop2.apply(f, p_drop, rng);
    x += f;
  }
  LayerNorm<T> enc_ln;
  const Mat<T> memory = enc_ln.forward(x, param(enc_norm_.gain), param(enc_norm_.bias));

  // decoder
  Mat<T> y(nd, d);
  for (std::size_t s = 0; s < b.size(); ++s) {
    for (std::size_t t = 0; t < b.dec_len[s]; ++t) {
      const Index r = static_cast<Index>(b.dec_off[s] + t);
      y.row(r) = E.row(b.dec_in[r]) * emb_scale + positions_.row(static_cast<Index>(t));
    }
  }
  Dropout<T> dec_in_drop;
  dec_in_drop.apply(y, p_drop, rng);
  std::vector<DecoderLayerState<T>> ds(dec_.size());
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    const auto& id = dec_[l];
    auto& st = ds[l];
    st.a = st.ln1.forward(y, param(id.ln_self.gain), param(id.ln_self.bias));
    Mat<T> z = st.self.forward(*this, id.self, st.a, st.a, dec_seg, true, p_attn, rng);
    st.drop1.apply(z, p_drop, rng);
    y += z;
    st.c = st.ln2.forward(y, param(id.ln_cross.gain), param(id.ln_cross.bias));
    Mat<T> zc = st.cross.forward(*this, id.cross, st.c, memory, cross_seg, false, p_attn, rng);
    st.drop2.apply(zc, p_drop, rng);
    y += zc;
    st.f = st.ln3.forward(y, param(id.ln_ffn.gain), param(id.ln_ffn.bias));
    Mat<T> ff = st.ffn.forward(*this, id.ffn, st.f, p_relu, rng);
    st.drop3.apply(ff, p_drop, rng);
    y += ff;
  }
  LayerNorm<T> dec_ln;
  const Mat<T> hidden = dec_ln.forward(y, param(dec_norm_.gain), param(dec_norm_.bias));
  Mat<T> logits(nd, V);
  logits.noalias() = (hidden * E.transpose()) * out_scale;

  // loss
  const double eps = label_smoothing;
  const double eps_i = V > 1 ? eps / static_cast<double>(V - 1) : 0.0;
  std::vector<double> row_w(static_cast<std::size_t>(nd));
  double total_w = 0.0;
  for (std::size_t s = 0; s < b.size(); ++s) {
    for (std::size_t t = 0; t < b.dec_len[s]; ++t) row_w[b.dec_off[s] + t] = b.weight[s];
    total_w += b.weight[s] * static_cast<double>(b.dec_len[s]);
  }
  if (!(total_w > 0.0)) fail(Errc::InvalidArgument, "batch has no weighted target tokens");
  double loss_sum = 0.0, nll_sum = 0.0;
  Mat<T> dlogits;
  if (grad) dlogits.resize(nd, V);
  for (Index r = 0; r < nd; ++r) {
    const T mx = logits.row(r).maxCoeff();
    double sum_exp = 0.0, sum_logit = 0.0;
    for (Index c = 0; c < V; ++c) {
      sum_exp += std::exp(static_cast<double>(logits(r, c) - mx));
      sum_logit += static_cast<double>(logits(r, c));
    }
    const double lse = static_cast<double>(mx) + std::log(sum_exp);
    const TokenId tgt = b.dec_out[r];
    const double nll = lse - static_cast<double>(logits(r, tgt));
    const double smooth = static_cast<double>(V) * lse - sum_logit;
    const double w = row_w[static_cast<std::size_t>(r)];
    loss_sum += w * ((1.0 - eps - eps_i) * nll + eps_i * smooth);
    nll_sum += w * nll;
    if (grad) {
      const double scale = w / total_w;
      for (Index c = 0; c < V; ++c) {
        const double prob = std::exp(static_cast<double>(logits(r, c)) - lse);
        dlogits(r, c) = static_cast<T>(scale * (prob - eps_i));
      }
      dlogits(r, tgt) -= static_cast<T>(scale * (1.0 - eps - eps_i));
    }
  }
  LossStats stats{loss_sum / total_w, nll_sum / total_w, total_w};
  if (!std::isfinite(stats.loss)) fail(Errc::NonFiniteLoss, "loss is not finite");
  if (!grad) return stats;

  // backward
  if (grad->size() != layout_.total()) fail(Errc::InvalidArgument, "gradient buffer size");
  auto G = [&](std::size_t id) {
    const auto& t = layout_[id];
    return MatMap<T>(grad->data() + t.offset, static_cast<Index>(t.rows),
                     static_cast<Index>(t.cols));
  };
  auto dE = G(tok_embed_);
  dE.noalias() += (dlogits.transpose() * hidden) * out_scale;
  Mat<T> dh(nd, d);
  dh.noalias() = (dlogits * E) * out_scale;
  Mat<T> dy = dec_ln.backward(dh, param(dec_norm_.gain), G(dec_norm_.gain), G(dec_norm_.bias));
  Mat<T> dmem = Mat<T>::Zero(ne, d);
  for (std::size_t li = dec_.size(); li-- > 0;) {
    const auto& id = dec_[li];
    const auto& st = ds[li];
    Mat<T> dff = dy;
    st.drop3.backward(dff);
    const Mat<T> df = st.ffn.backward(*this, id.ffn, G, dff, st.f);
    dy += st.ln3.backward(df, param(id.ln_ffn.gain), G(id.ln_ffn.gain), G(id.ln_ffn.bias));

    Mat<T> dzc = dy;
    st.drop2.backward(dzc);
    Mat<T> dc = Mat<T>::Zero(nd, d);
    st.cross.backward(*this, id.cross, G, dzc, st.c, memory, cross_seg, dc, dmem);
    dy += st.ln2.backward(dc, param(id.ln_cross.gain), G(id.ln_cross.gain), G(id.ln_cross.bias));

    Mat<T> dz = dy;
    st.drop1.backward(dz);
    Mat<T> da = Mat<T>::Zero(nd, d);
    st.self.backward(*this, id.self, G, dz, st.a, st.a, dec_seg, da, da);
    dy += st.ln1.backward(da, param(id.ln_self.gain), G(id.ln_self.gain), G(id.ln_self.bias));
  }
  dec_in_drop.backward(dy);
  for (Index r = 0; r < nd; ++r) dE.row(b.dec_in[r]) += dy.row(r) * emb_scale;

  Mat<T> dx = enc_ln.backward(dmem, param(enc_norm_.gain), G(enc_norm_.gain), G(enc_norm_.bias));
  for (std::size_t li = enc_.size(); li-- > 0;) {
    const auto& id = enc_[li];
    const auto& st = es[li];
    Mat<T> df = dx;
    st.drop2.backward(df);
    const Mat<T> db = st.ffn.backward(*this, id.ffn, G, df, st.b);
    dx += st.ln2.backward(db, param(id.ln_ffn.gain), G(id.ln_ffn.gain), G(id.ln_ffn.bias));

    Mat<T> dz = dx;
    st.drop1.backward(dz);
    Mat<T> da = Mat<T>::Zero(ne, d);
    st.attn.backward(*this, id.attn, G, dz, st.a, st.a, enc_seg, da, da);
    dx += st.ln1.backward(da, param(id.ln_attn.gain), G(id.ln_attn.gain), G(id.ln_attn.bias));
  }
  enc_in_drop.backward(dx);
  auto dL = G(lang_embed_);
  for (Index r = 0; r < ne; ++r) {
    dE.row(b.enc_ids[r]) += dx.row(r) * emb_scale;
    dL.row(b.enc_lang[r]) += dx.row(r);
  }
  return stats;
}

template <class T>
std::vector<SourceMemory<T>> Transformer<T>::encode(const PackedBatch& b) const {
  const Index d = static_cast<Index>(arch_.dim);
  const Index ne = static_cast<Index>(b.enc_ids.size());
  const T emb_scale = std::sqrt(static_cast<T>(d));
  const auto E = param(tok_embed_);
  const auto L = param(lang_embed_);
  std::vector<Seg> segs;
  for (std::size_t s = 0; s < b.size(); ++s) {
    const auto o = static_cast<Index>(b.enc_off[s]), l = static_cast<Index>(b.enc_len[s]);
    segs.push_back({o, l, o, l});
  }
  for (auto p : b.enc_pos) {
    if (p < 0 || static_cast<std::size_t>(p) >= arch_.max_positions) {
      fail(Errc::SequenceTooLong, "position beyond table");
    }
  }
  Mat<T> x(ne, d);
  for (Index r = 0; r < ne; ++r) {
    x.row(r) = E.row(b.enc_ids[r]) * emb_scale + positions_.row(b.enc_pos[r]) +
               L.row(b.enc_lang[r]);
  }
  for (const auto& id : enc_) {
    Attention<T> attn;
    FeedForward<T> ffn;
    const Mat<T> a = norm_apply(x, param(id.ln_attn.gain), param(id.ln_attn.bias));
    x += attn.forward(*this, id.attn, a, a, segs, false, 0.0, nullptr);
    const Mat<T> c = norm_apply(x, param(id.ln_ffn.gain), param(id.ln_ffn.bias));
    x += ffn.forward(*this, id.ffn, c, 0.0, nullptr);
  }
  const Mat<T> memory = norm_apply(x, param(enc_norm_.gain), param(enc_norm_.bias));
  std::vector<SourceMemory<T>> out(b.size());
  for (std::size_t s = 0; s < b.size(); ++s) {
    auto& sm = out[s];
    sm.memory = memory.middleRows(segs[s].q_off, segs[s].q_len);
    for (const auto& id : dec_) {
      sm.cross_k.push_back(linear(sm.memory, param(id.cross.wk), param(id.cross.bk)));
      sm.cross_v.push_back(linear(sm.memory, param(id.cross.wv), param(id.cross.bv)));
    }
  }
  return out;
}

template <class T>
DecoderCache<T> Transformer<T>::new_cache() const {
  DecoderCache<T> c;
  c.self_k.resize(dec_.size());
  c.self_v.resize(dec_.size());
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    c.self_k[l].resize(0, static_cast<Index>(arch_.dim));
    c.self_v[l].resize(0, static_cast<Index>(arch_.dim));
  }
  return c;
}

template <class T>
Mat<T> Transformer<T>::step(const std::vector<const SourceMemory<T>*>& sources,
                            const std::vector<DecoderCache<T>*>& caches,
                            const std::vector<TokenId>& tokens) const {
  const Index d = static_cast<Index>(arch_.dim);
  const Index n = static_cast<Index>(tokens.size());
  const Index heads = static_cast<Index>(arch_.heads);
  const Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T emb_scale = std::sqrt(static_cast<T>(d));
  const auto E = param(tok_embed_);

  Mat<T> x(n, d);
  for (Index h = 0; h < n; ++h) {
    const std::size_t pos = caches[h]->steps;
    if (pos >= arch_.max_positions) fail(Errc::SequenceTooLong, "decoding beyond position table");
    x.row(h) = E.row(tokens[h]) * emb_scale + positions_.row(static_cast<Index>(pos));
  }

  // single-query attention of row h against (K, V)
  auto attend = [&](const auto& q_row, const Mat<T>& K, const Mat<T>& Vv, auto out_row) {
    for (Index hd = 0; hd < heads; ++hd) {
      const auto Kh = K.middleCols(hd * dh, dh);
      Mat<T> s = (q_row.segment(hd * dh, dh) * Kh.transpose()) * scale;
      softmax_rows(s, [&](Index) { return s.cols(); });
      out_row.segment(hd * dh, dh).noalias() = s * Vv.middleCols(hd * dh, dh);
    }
  };

  for (std::size_t l = 0; l < dec_.size(); ++l) {
    const auto& id = dec_[l];
    {
      const Mat<T> a = norm_apply(x, param(id.ln_self.gain), param(id.ln_self.bias));
      const Mat<T> q = linear(a, param(id.self.wq), param(id.self.bq));
      const Mat<T> k = linear(a, param(id.self.wk), param(id.self.bk));
      const Mat<T> v = linear(a, param(id.self.wv), param(id.self.bv));
      Mat<T> ctx(n, d);
      for (Index h = 0; h < n; ++h) {
        auto& ck = caches[h]->self_k[l];
        auto& cv = caches[h]->self_v[l];
        ck.conservativeResize(ck.rows() + 1, d);
        cv.conservativeResize(cv.rows() + 1, d);
        ck.row(ck.rows() - 1) = k.row(h);
        cv.row(cv.rows() - 1) = v.row(h);
        attend(q.row(h), ck, cv, ctx.row(h));
      }
      x += linear(ctx, param(id.self.wo), param(id.self.bo));
    }
    {
      const Mat<T> c = norm_apply(x, param(id.ln_cross.gain), param(id.ln_cross.bias));
      const Mat<T> q = linear(c, param(id.cross.wq), param(id.cross.bq));
      Mat<T> ctx(n, d);
      for (Index h = 0; h < n; ++h) {
        attend(q.row(h), sources[h]->cross_k[l], sources[h]->cross_v[l], ctx.row(h));
      }
      x += linear(ctx, param(id.cross.wo), param(id.cross.bo));
    }
    {
      FeedForward<T> ffn;
      const Mat<T> f = norm_apply(x, param(id.ln_ffn.gain), param(id.ln_ffn.bias));
      x += ffn.forward(*this, id.ffn, f, 0.0, nullptr);
    }
  }
  for (Index h = 0; h < n; ++h) ++caches[h]->steps;
  const Mat<T> hidden = norm_apply(x, param(dec_norm_.gain), param(dec_norm_.bias));
  Mat<T> logp(n, static_cast<Index>(arch_.vocab));
  logp.noalias() = (hidden * E.transpose()) / emb_scale;
  for (Index h = 0; h < n; ++h) {
    const T mx = logp.row(h).maxCoeff();
    const T lse = mx + std::log((logp.row(h).array() - mx).exp().sum());
    logp.row(h).array() -= lse;
  }
  return logp;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace bitref::nn
