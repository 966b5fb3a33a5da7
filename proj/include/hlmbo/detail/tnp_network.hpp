#pragma once

// Transformer backbone of the neural-process surrogate with hand-written
// reverse-mode gradients. Templated on the scalar so the production model runs
// in float while gradient checks run in double.

#include <array>
#include <cmath>
#include <limits>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hlmbo::detail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NetShape {
  int input = 0;  // token feature width: x dims + y + flag
  int model = 64;
  int ff = 128;
  int heads = 8;
  int layers = 6;
  int embed_layers = 4;
};

template <typename T>
struct Linear {
  Mat<T> w;  // out x in
  Mat<T> b;  // 1 x out
};

template <typename T>
struct Norm {
  Mat<T> gamma;  // 1 x n
  Mat<T> beta;
};

template <typename T>
struct Block {
  Norm<T> ln1;
  Linear<T> q, k, v, o;
  Norm<T> ln2;
  Linear<T> ff1, ff2;
};

template <typename T>
struct Params {
  std::vector<Linear<T>> embed;
  std::vector<Block<T>> blocks;
  Norm<T> lnf;
  Linear<T> head1, head2;

  /// Calls fn(name, tensor) for every tensor in checkpoint order.
  template <typename P, typename Fn>
  static void visit_impl(P& p, Fn&& fn) {
    auto lin = [&](const std::string& n, auto& l) {
      fn(n + ".weight", l.w);
      fn(n + ".bias", l.b);
    };
    auto norm = [&](const std::string& n, auto& l) {
      fn(n + ".gamma", l.gamma);
      fn(n + ".beta", l.beta);
    };
    for (std::size_t i = 0; i < p.embed.size(); ++i)
      lin("embed." + std::to_string(i), p.embed[i]);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
      const std::string b = "block." + std::to_string(i);
      auto& blk = p.blocks[i];
      norm(b + ".ln1", blk.ln1);
      lin(b + ".attn.q", blk.q);
      lin(b + ".attn.k", blk.k);
      lin(b + ".attn.v", blk.v);
      lin(b + ".attn.o", blk.o);
      norm(b + ".ln2", blk.ln2);
      lin(b + ".ff.0", blk.ff1);
      lin(b + ".ff.1", blk.ff2);
    }
    norm("final_norm", p.lnf);
    lin("head.0", p.head1);
    lin("head.1", p.head2);
  }
  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, fn);
  }

  /// Zero-valued tensors with the layout of `shape`.
  static Params zeros(const NetShape& s) {
    Params p;
    auto lin = [](int out, int in) {
      return Linear<T>{Mat<T>::Zero(out, in), Mat<T>::Zero(1, out)};
    };
    auto norm = [](int n) {
      return Norm<T>{Mat<T>::Zero(1, n), Mat<T>::Zero(1, n)};
    };
    for (int i = 0; i < s.embed_layers; ++i)
      p.embed.push_back(lin(s.model, i == 0 ? s.input : s.model));
    for (int i = 0; i < s.layers; ++i) {
      p.blocks.push_back(Block<T>{norm(s.model), lin(s.model, s.model),
                                  lin(s.model, s.model), lin(s.model, s.model),
                                  lin(s.model, s.model), norm(s.model),
                                  lin(s.ff, s.model), lin(s.model, s.ff)});
    }
    p.lnf = norm(s.model);
    p.head1 = lin(s.model, s.model);
    p.head2 = lin(2, s.model);
    return p;
  }

  /// Xavier-uniform weights, zero biases, unit norm gains.
  static Params init(const NetShape& s, std::mt19937_64& rng) {
    Params p = zeros(s);
    auto xavier = [&](Linear<T>& l, double gain) {
      const double a = gain * std::sqrt(6.0 / (l.w.rows() + l.w.cols()));
      std::uniform_real_distribution<double> u(-a, a);
      for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = T(u(rng));
    };
    for (auto& l : p.embed) xavier(l, 1.0);
    for (auto& b : p.blocks) {
      b.ln1.gamma.setOnes();
      b.ln2.gamma.setOnes();
      xavier(b.q, 1.0);
      xavier(b.k, 1.0);
      xavier(b.v, 1.0);
      xavier(b.o, 1.0 / std::sqrt(2.0 * s.layers));
      xavier(b.ff1, 1.0);
      xavier(b.ff2, 1.0 / std::sqrt(2.0 * s.layers));
    }
    p.lnf.gamma.setOnes();
    xavier(p.head1, 1.0);
    xavier(p.head2, 0.1);
    return p;
  }

  template <typename U>
  Params<U> cast() const {
    Params<U> out = Params<U>::zeros_like(*this);
    std::vector<const Mat<T>*> src;
    visit([&](const std::string&, const Mat<T>& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.visit([&](const std::string&, Mat<U>& m) { m = src[i++]->template cast<U>(); });
    return out;
  }

  template <typename U>
  static Params zeros_like(const Params<U>& other) {
    Params p;
    p.embed.resize(other.embed.size());
    p.blocks.resize(other.blocks.size());
    std::vector<std::pair<Eigen::Index, Eigen::Index>> dims;
    other.visit([&](const std::string&, const Mat<U>& m) {
      dims.emplace_back(m.rows(), m.cols());
    });
    std::size_t i = 0;
    p.visit([&](const std::string&, Mat<T>& m) {
      m = Mat<T>::Zero(dims[i].first, dims[i].second);
      ++i;
    });
    return p;
  }

  std::size_t count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Mat<T>& m) { n += m.size(); });
    return n;
  }
};

/// tanh-form GELU, elementwise.
template <typename T>
Mat<T> gelu(const Mat<T>& z) {
  const T c = T(0.79788456080286535588);  // sqrt(2/pi)
  auto a = z.array();
  return (T(0.5) * a * (T(1) + (c * (a + T(0.044715) * a.cube())).tanh())).matrix();
}

template <typename T>
Mat<T> gelu_grad(const Mat<T>& z) {
  const T c = T(0.79788456080286535588);
  auto a = z.array();
  const auto t = (c * (a + T(0.044715) * a.cube())).tanh().eval();
  return (T(0.5) * (T(1) + t) +
          T(0.5) * a * (T(1) - t.square()) * c * (T(1) + T(3 * 0.044715) * a.square()))
      .matrix();
}

template <typename T>
inline T softplus(T r) {
  return r > T(20) ? r : std::log1p(std::exp(r));
}

template <typename T>
inline T sigmoid(T r) {
  return r >= T(0) ? T(1) / (T(1) + std::exp(-r))
                   : std::exp(r) / (T(1) + std::exp(r));
}

constexpr double kVarianceFloor = 1e-6;
constexpr double kNormEps = 1e-5;

/// (mean, variance) from the two raw head outputs.
template <typename T>
inline std::pair<T, T> gaussian_head(T raw_mean, T raw_var) {
  return {raw_mean, softplus(raw_var) + T(kVarianceFloor)};
}

// ----------------------------------------------------------------- primitives

template <typename T>
Mat<T> linear_fwd(const Mat<T>& x, const Linear<T>& l) {
  Mat<T> y = x * l.w.transpose();
  y.rowwise() += l.b.row(0);
  return y;
}

template <typename T>
void linear_bwd(const Mat<T>& x, const Linear<T>& l, const Mat<T>& dy,
                Linear<T>& grad, Mat<T>* dx) {
  grad.w.noalias() += dy.transpose() * x;
  grad.b.row(0) += dy.colwise().sum();
  if (dx) dx->noalias() = dy * l.w;
}

template <typename T>
struct NormCache {
  Mat<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
Mat<T> norm_fwd(const Mat<T>& x, const Norm<T>& n, NormCache<T>* cache) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Mat<T> xhat(rows, cols);
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mu = x.row(r).mean();
    const T var = (x.row(r).array() - mu).square().mean();
    rstd[r] = T(1) / std::sqrt(var + T(kNormEps));
    xhat.row(r) = (x.row(r).array() - mu) * rstd[r];
  }
  Mat<T> y = (xhat.array().rowwise() * n.gamma.row(0).array()).matrix();
  y.rowwise() += n.beta.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
Mat<T> norm_bwd(const NormCache<T>& c, const Norm<T>& n, const Mat<T>& dy,
                Norm<T>& grad) {
  grad.gamma.row(0) += (dy.array() * c.xhat.array()).matrix().colwise().sum();
  grad.beta.row(0) += dy.colwise().sum();
  Mat<T> dxhat = (dy.array().rowwise() * n.gamma.row(0).array()).matrix();
  Mat<T> dx(dy.rows(), dy.cols());
  const T inv_n = T(1) / T(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T m1 = dxhat.row(r).sum() * inv_n;
    const T m2 = (dxhat.row(r).array() * c.xhat.row(r).array()).sum() * inv_n;
    dx.row(r) = c.rstd[r] *
                (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------- full pass

/// Attention mask as an allow-list: allowed(i, j) != 0 means token i may
/// attend to token j. Every row must allow at least its own index.
using Mask = Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
struct BlockCache {
  Mat<T> h_in;
  NormCache<T> n1;
  Mat<T> a, q, k, v;
  std::vector<Mat<T>> probs;  // per head, L x L
  Mat<T> attn;                // concatenated head outputs
  Mat<T> h_mid;
  NormCache<T> n2;
  Mat<T> b, z;
};

template <typename T>
struct ForwardCache {
  std::vector<Mat<T>> embed_in;   // input of each embedding linear
  std::vector<Mat<T>> embed_pre;  // pre-activation of each embedding linear
  std::vector<BlockCache<T>> blocks;
  Mat<T> h_final;
  NormCache<T> nf;
  Mat<T> f, u_pre, u;
};

template <typename T>
class Network {
public:
  Network() = default;
  Network(NetShape shape, Params<T> params)
      : shape_(shape), params_(std::move(params)) {}

  const NetShape& shape() const { return shape_; }
  Params<T>& params() { return params_; }
  const Params<T>& params() const { return params_; }

  Mat<T> embed(const Mat<T>& tokens, ForwardCache<T>* cache) const {
    Mat<T> h = tokens;
    const std::size_t n = params_.embed.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (cache) cache->embed_in.push_back(h);
      Mat<T> pre = linear_fwd(h, params_.embed[i]);
      if (i + 1 < n) {
        if (cache) cache->embed_pre.push_back(pre);
        h = gelu(pre);
      } else {
        h = std::move(pre);
      }
    }
    return h;
  }

  /// Full masked forward pass; returns the L x 2 raw head outputs.
  Mat<T> forward(const Mat<T>& tokens, const Mask& allowed,
                 ForwardCache<T>* cache,
                 std::vector<Mat<T>>* keys = nullptr,
                 std::vector<Mat<T>>* values = nullptr) const {
    const int dh = shape_.model / shape_.heads;
    const T scale = T(1) / std::sqrt(T(dh));
    const Eigen::Index len = tokens.rows();
    Mat<T> h = embed(tokens, cache);
    Mat<T> bias(len, len);
    for (Eigen::Index r = 0; r < len; ++r)
      for (Eigen::Index c = 0; c < len; ++c)
        bias(r, c) = allowed(r, c) ? T(0) : -std::numeric_limits<T>::infinity();
    for (const auto& blk : params_.blocks) {
      BlockCache<T> bc;
      if (cache) bc.h_in = h;
      Mat<T> a = norm_fwd(h, blk.ln1, cache ? &bc.n1 : nullptr);
      Mat<T> q = linear_fwd(a, blk.q);
      Mat<T> k = linear_fwd(a, blk.k);
      Mat<T> v = linear_fwd(a, blk.v);
      Mat<T> attn(len, shape_.model);
      for (int hd = 0; hd < shape_.heads; ++hd) {
        const auto qh = q.middleCols(hd * dh, dh);
        const auto kh = k.middleCols(hd * dh, dh);
        Mat<T> s = (qh * kh.transpose()) * scale;
        softmax_rows(s, bias);
        attn.middleCols(hd * dh, dh).noalias() = s * v.middleCols(hd * dh, dh);
        if (cache) bc.probs.push_back(std::move(s));
      }
      if (keys) keys->push_back(k);
      if (values) values->push_back(v);
      h += linear_fwd(attn, blk.o);
      if (cache) bc.h_mid = h;
      Mat<T> b = norm_fwd(h, blk.ln2, cache ? &bc.n2 : nullptr);
      Mat<T> z = linear_fwd(b, blk.ff1);
      h += linear_fwd(gelu(z), blk.ff2);
      if (cache) {
        bc.a = std::move(a);
        bc.q = std::move(q);
        bc.k = std::move(k);
        bc.v = std::move(v);
        bc.attn = std::move(attn);
        bc.b = std::move(b);
        bc.z = std::move(z);
        cache->blocks.push_back(std::move(bc));
      }
    }
    Mat<T> f = norm_fwd(h, params_.lnf, cache ? &cache->nf : nullptr);
    Mat<T> u_pre = linear_fwd(f, params_.head1);
    Mat<T> u = gelu(u_pre);
    Mat<T> out = linear_fwd(u, params_.head2);
    if (cache) {
      cache->h_final = std::move(h);
      cache->f = std::move(f);
      cache->u_pre = std::move(u_pre);
      cache->u = std::move(u);
    }
    return out;
  }

  /// Accumulates parameter gradients given d(loss)/d(raw outputs).
  void backward(const ForwardCache<T>& c, const Mat<T>& dout,
                Params<T>& grad) const {
    const int dh = shape_.model / shape_.heads;
    const T scale = T(1) / std::sqrt(T(dh));
    Mat<T> du;
    linear_bwd(c.u, params_.head2, dout, grad.head2, &du);
    Mat<T> du_pre = du.cwiseProduct(gelu_grad(c.u_pre));
    Mat<T> df;
    linear_bwd(c.f, params_.head1, du_pre, grad.head1, &df);
    Mat<T> dh_ = norm_bwd(c.nf, params_.lnf, df, grad.lnf);

    for (int li = static_cast<int>(params_.blocks.size()) - 1; li >= 0; --li) {
      const auto& blk = params_.blocks[li];
      const auto& bc = c.blocks[li];
      auto& g = grad.blocks[li];
      // feed-forward residual
      Mat<T> gz = gelu(bc.z);
      Mat<T> dgz;
      linear_bwd(gz, blk.ff2, dh_, g.ff2, &dgz);
      Mat<T> dz = dgz.cwiseProduct(gelu_grad(bc.z));
      Mat<T> db;
      linear_bwd(bc.b, blk.ff1, dz, g.ff1, &db);
      dh_ += norm_bwd(bc.n2, blk.ln2, db, g.ln2);
      // attention residual
      Mat<T> dattn;
      linear_bwd(bc.attn, blk.o, dh_, g.o, &dattn);
      Mat<T> dq = Mat<T>::Zero(bc.q.rows(), bc.q.cols());
      Mat<T> dk = Mat<T>::Zero(bc.k.rows(), bc.k.cols());
      Mat<T> dv = Mat<T>::Zero(bc.v.rows(), bc.v.cols());
      for (int hd = 0; hd < shape_.heads; ++hd) {
        const Mat<T>& p = bc.probs[hd];
        const auto doh = dattn.middleCols(hd * dh, dh);
        dv.middleCols(hd * dh, dh).noalias() += p.transpose() * doh;
        Mat<T> dp = doh * bc.v.middleCols(hd * dh, dh).transpose();
        Eigen::Matrix<T, Eigen::Dynamic, 1> rs =
            (dp.array() * p.array()).rowwise().sum();
        Mat<T> ds = (p.array() * (dp.array().colwise() - rs.array())).matrix() * scale;
        dq.middleCols(hd * dh, dh).noalias() += ds * bc.k.middleCols(hd * dh, dh);
        dk.middleCols(hd * dh, dh).noalias() += ds.transpose() * bc.q.middleCols(hd * dh, dh);
      }
      Mat<T> da, tmp;
      linear_bwd(bc.a, blk.q, dq, g.q, &da);
      linear_bwd(bc.a, blk.k, dk, g.k, &tmp);
      da += tmp;
      linear_bwd(bc.a, blk.v, dv, g.v, &tmp);
      da += tmp;
      dh_ += norm_bwd(bc.n1, blk.ln1, da, g.ln1);
    }
    // embedding MLP
    const std::size_t n = params_.embed.size();
    for (std::size_t i = n; i-- > 0;) {
      Mat<T> dx;
      linear_bwd(c.embed_in[i], params_.embed[i], dh_, grad.embed[i],
                 i > 0 ? &dx : nullptr);
      if (i > 0)
        dh_ = dx.cwiseProduct(gelu_grad(c.embed_pre[i - 1]));
    }
  }

  // ------------------------------------------------------------ query pass

  /// Keys and values of an encoded context, per layer.
  struct Context {
    std::vector<Mat<T>> keys;
    std::vector<Mat<T>> values;
    Eigen::Index size() const { return keys.empty() ? 0 : keys.front().rows(); }
  };

  /// Runs the context tokens through the stack with full mutual visibility.
  Context encode_context(const Mat<T>& tokens) const {
    Context ctx;
    if (tokens.rows() == 0) {
      ctx.keys.assign(params_.blocks.size(), Mat<T>(0, shape_.model));
      ctx.values.assign(params_.blocks.size(), Mat<T>(0, shape_.model));
      return ctx;
    }
    Mask all = Mask::Ones(tokens.rows(), tokens.rows());
    forward(tokens, all, nullptr, &ctx.keys, &ctx.values);
    return ctx;
  }

  /// Raw head outputs for one target token that sees the context and itself.
  /// Each call depends only on `token` and `ctx`.
  std::array<T, 2> query(const Mat<T>& token, const Context& ctx) const {
    const int dh = shape_.model / shape_.heads;
    const T scale = T(1) / std::sqrt(T(dh));
    const Eigen::Index m = ctx.size();
    Mat<T> h = embed(token, nullptr);
    Eigen::Matrix<T, 1, Eigen::Dynamic> sc(m + 1);
    for (std::size_t li = 0; li < params_.blocks.size(); ++li) {
      const auto& blk = params_.blocks[li];
      const Mat<T> a = norm_fwd<T>(h, blk.ln1, nullptr);
      const Mat<T> q = linear_fwd(a, blk.q);
      const Mat<T> k = linear_fwd(a, blk.k);
      const Mat<T> v = linear_fwd(a, blk.v);
      Mat<T> attn(1, shape_.model);
      for (int hd = 0; hd < shape_.heads; ++hd) {
        const auto qh = q.middleCols(hd * dh, dh);
        for (Eigen::Index j = 0; j < m; ++j)
          sc[j] = qh.row(0).dot(ctx.keys[li].row(j).segment(hd * dh, dh)) * scale;
        sc[m] = qh.row(0).dot(k.row(0).segment(hd * dh, dh)) * scale;
        const T mx = sc.maxCoeff();
        sc = (sc.array() - mx).exp();
        sc /= sc.sum();
        auto out = attn.middleCols(hd * dh, dh);
        out = sc[m] * v.middleCols(hd * dh, dh);
        for (Eigen::Index j = 0; j < m; ++j)
          out += sc[j] * ctx.values[li].row(j).segment(hd * dh, dh);
      }
      h += linear_fwd(attn, blk.o);
      const Mat<T> b = norm_fwd<T>(h, blk.ln2, nullptr);
      const Mat<T> z = linear_fwd(b, blk.ff1);
      h += linear_fwd(gelu(z), blk.ff2);
    }
    const Mat<T> f = norm_fwd<T>(h, params_.lnf, nullptr);
    const Mat<T> u = gelu(linear_fwd(f, params_.head1));
    const Mat<T> out = linear_fwd(u, params_.head2);
    return {out(0, 0), out(0, 1)};
  }

private:
  static void softmax_rows(Mat<T>& s, const Mat<T>& bias) {
    s += bias;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      auto row = s.row(r).array();
      row = (row - row.maxCoeff()).exp();
      row /= row.sum();
    }
  }

  NetShape shape_;
  Params<T> params_;
};

// ----------------------------------------------------------------- sequences

/// Token layout for one autoregressive training sequence:
/// [context (m)] [target truths (n)] [target queries (n)].
struct SequenceLayout {
  Eigen::Index context = 0;
  Eigen::Index targets = 0;
  Eigen::Index length() const { return context + 2 * targets; }
  Eigen::Index truth(Eigen::Index i) const { return context + i; }
  Eigen::Index query(Eigen::Index i) const { return context + targets + i; }
};

/// Context tokens see all context tokens. Truth token i sees the context and
/// truths <= i. Query token i sees the context, truths < i and itself.
inline Mask autoregressive_mask(const SequenceLayout& lay) {
  const Eigen::Index n = lay.length();
  Mask m = Mask::Zero(n, n);
  m.leftCols(lay.context).setOnes();
  for (Eigen::Index i = 0; i < lay.targets; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) m(lay.truth(i), lay.truth(j)) = 1;
    for (Eigen::Index j = 0; j < i; ++j) m(lay.query(i), lay.truth(j)) = 1;
    m(lay.query(i), lay.query(i)) = 1;
  }
  return m;
}

/// Mean Gaussian NLL over the query rows of one sequence, plus its gradient
/// with respect to the raw outputs (when `dout` is given).
template <typename T>
T sequence_nll(const Mat<T>& out, const SequenceLayout& lay,
               const std::vector<T>& y, Mat<T>* dout, T weight = T(1)) {
  T total = 0;
  const T inv = T(1) / T(lay.targets);
  const T log2pi = T(1.83787706640934548356);
  for (Eigen::Index i = 0; i < lay.targets; ++i) {
    const Eigen::Index r = lay.query(i);
    const auto [mu, var] = gaussian_head(out(r, 0), out(r, 1));
    const T resid = y[i] - mu;
    total += T(0.5) * (log2pi + std::log(var) + resid * resid / var);
    if (dout) {
      (*dout)(r, 0) += weight * inv * (-resid / var);
      const T dvar = T(0.5) / var - T(0.5) * resid * resid / (var * var);
      (*dout)(r, 1) += weight * inv * dvar * sigmoid(out(r, 1));
    }
  }
  return total * inv;
}

}  // namespace hlmbo::detail
