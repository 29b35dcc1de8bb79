#pragma once

// Small trainable transformer sentence encoder (post-LN, bidirectional
// attention, GELU feed-forward, mean pooling) with hand-written backward
// passes. It exists so every training property runs on a CPU in seconds;
// gradient correctness is pinned by finite-difference tests.
//
// Texts are tokenized with the asset-free chunk tokenizer and ids folded
// into a fixed-size vocabulary by hashing.

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "matterrank/embedcore.hpp"
#include "matterrank/errors.hpp"
#include "matterrank/io_util.hpp"
#include "matterrank/rng.hpp"
#include "matterrank/tokenize.hpp"

namespace matterrank::finetune {

struct ToyEncoderConfig {
  std::size_t vocab_size = 1024;
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t ffn_dim = 64;
  std::size_t max_len = 64;
  std::uint64_t init_seed = 42;

  void validate() const {
    if (vocab_size == 0 || dim == 0 || heads == 0 || layers == 0 ||
        ffn_dim == 0 || max_len == 0)
      throw ConfigError("toy encoder: all sizes must be positive");
    if (dim % heads != 0)
      throw ConfigError("toy encoder: dim must be divisible by heads");
  }
};

class ToyEncoder {
 public:
  using Mat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit ToyEncoder(ToyEncoderConfig cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    build_layout();
    params_.assign(total_, 0.0);
    grads_.assign(total_, 0.0);
    init_params();
  }

  const ToyEncoderConfig& config() const { return cfg_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& grads() { return grads_; }
  void zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

  std::string fingerprint() const {
    return io::sha256_hex(std::string_view(
        reinterpret_cast<const char*>(params_.data()),
        params_.size() * sizeof(double)));
  }

  // Chunk-tokenize, hash into the vocab, truncate to the tighter of
  // max_seq_len (0 = no extra cap) and the positional table.
  std::vector<std::uint64_t> encode_ids(const std::string& text,
                                        std::size_t max_seq_len = 0) const {
    const auto tok = tokenizer_.tokenize(text);
    std::size_t limit = cfg_.max_len;
    if (max_seq_len != 0) limit = std::min(limit, max_seq_len);
    std::vector<std::uint64_t> ids;
    ids.reserve(std::min(tok.size(), limit));
    for (std::size_t i = 0; i < tok.size() && i < limit; ++i)
      ids.push_back(tok.ids[i] % cfg_.vocab_size);
    return ids;
  }

  struct SeqCache {
    std::vector<std::uint64_t> ids;
    std::vector<Mat> x_in;                  // layer inputs, layers+1 entries
    std::vector<Mat> q, k, v, o, r1, y, f1, g, r2;
    std::vector<std::vector<Mat>> attn;     // [layer][head] softmax probs
    std::vector<Mat> xhat1, xhat2;          // normalized LN inputs
    std::vector<Eigen::VectorXd> inv_std1, inv_std2;
  };

  struct Cache {
    std::vector<SeqCache> seqs;
  };

  // Pooled sentence embeddings for a batch of id sequences. Pass a cache to
  // enable a later backward_batch.
  std::vector<embedcore::Vector> forward_batch(
      const std::vector<std::vector<std::uint64_t>>& batch,
      Cache* cache = nullptr) const {
    std::vector<embedcore::Vector> out;
    out.reserve(batch.size());
    for (const auto& ids : batch) {
      SeqCache seq;
      out.push_back(forward_one(ids, seq));
      if (cache != nullptr) cache->seqs.push_back(std::move(seq));
    }
    return out;
  }

  embedcore::Vector encode(const std::string& text,
                           std::size_t max_seq_len = 0) const {
    SeqCache seq;
    return forward_one(encode_ids(text, max_seq_len), seq);
  }

  // Accumulates parameter gradients for d(loss)/d(pooled embedding) of every
  // sequence in the cache. Call zero_grads() between optimizer steps.
  void backward_batch(const Cache& cache,
                      const std::vector<embedcore::Vector>& d_pooled) {
    if (cache.seqs.size() != d_pooled.size())
      throw std::invalid_argument("backward_batch: cache/gradient mismatch");
    for (std::size_t s = 0; s < cache.seqs.size(); ++s)
      backward_one(cache.seqs[s], d_pooled[s]);
  }

  // ----------------------------------------------------------- persistence

  void save(const std::filesystem::path& path) const {
    std::string blob = "MRTOY001";
    auto put_u64 = [&](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) blob.push_back(static_cast<char>(v >> (8 * i)));
    };
    put_u64(cfg_.vocab_size);
    put_u64(cfg_.dim);
    put_u64(cfg_.heads);
    put_u64(cfg_.layers);
    put_u64(cfg_.ffn_dim);
    put_u64(cfg_.max_len);
    put_u64(cfg_.init_seed);
    blob.append(reinterpret_cast<const char*>(params_.data()),
                params_.size() * sizeof(double));
    io::write_file(path, blob);
  }

  static ToyEncoder load(const std::filesystem::path& path) {
    const std::string blob = io::read_file(path);
    if (blob.size() < 8 + 7 * 8 || blob.compare(0, 8, "MRTOY001") != 0)
      throw ModelError("not a toy encoder checkpoint: " + path.string());
    std::size_t off = 8;
    auto get_u64 = [&] {
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(
                 static_cast<unsigned char>(blob[off + i]))
             << (8 * i);
      off += 8;
      return v;
    };
    ToyEncoderConfig cfg;
    cfg.vocab_size = get_u64();
    cfg.dim = get_u64();
    cfg.heads = get_u64();
    cfg.layers = get_u64();
    cfg.ffn_dim = get_u64();
    cfg.max_len = get_u64();
    cfg.init_seed = get_u64();
    ToyEncoder enc(cfg);
    const std::size_t want = enc.params_.size() * sizeof(double);
    if (blob.size() - off != want)
      throw ModelError("toy encoder checkpoint truncated: " + path.string());
    std::memcpy(enc.params_.data(), blob.data() + off, want);
    return enc;
  }

 private:
  struct TensorRef {
    std::size_t offset = 0, rows = 0, cols = 0;
  };

  struct LayerRefs {
    TensorRef wq, wk, wv, wo, bq, bk, bv, bo;
    TensorRef ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
  };

  TensorRef alloc(std::size_t rows, std::size_t cols) {
    TensorRef r{total_, rows, cols};
    total_ += rows * cols;
    return r;
  }

  void build_layout() {
    total_ = 0;
    tok_emb_ = alloc(cfg_.vocab_size, cfg_.dim);
    pos_emb_ = alloc(cfg_.max_len, cfg_.dim);
    layers_.clear();
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      LayerRefs r;
      r.wq = alloc(cfg_.dim, cfg_.dim);
      r.wk = alloc(cfg_.dim, cfg_.dim);
      r.wv = alloc(cfg_.dim, cfg_.dim);
      r.wo = alloc(cfg_.dim, cfg_.dim);
      r.bq = alloc(1, cfg_.dim);
      r.bk = alloc(1, cfg_.dim);
      r.bv = alloc(1, cfg_.dim);
      r.bo = alloc(1, cfg_.dim);
      r.ln1_g = alloc(1, cfg_.dim);
      r.ln1_b = alloc(1, cfg_.dim);
      r.w1 = alloc(cfg_.dim, cfg_.ffn_dim);
      r.b1 = alloc(1, cfg_.ffn_dim);
      r.w2 = alloc(cfg_.ffn_dim, cfg_.dim);
      r.b2 = alloc(1, cfg_.dim);
      r.ln2_g = alloc(1, cfg_.dim);
      r.ln2_b = alloc(1, cfg_.dim);
      layers_.push_back(r);
    }
  }

  void init_params() {
    rng::SplitMix gen(cfg_.init_seed);
    for (auto& p : params_) p = gen.next_gaussian() * 0.02;
    // LayerNorm scales start at 1, shifts at 0; biases at 0.
    for (const auto& l : layers_) {
      for (const auto& b : {l.bq, l.bk, l.bv, l.bo, l.b1, l.b2, l.ln1_b,
                            l.ln2_b})
        for (std::size_t i = 0; i < b.rows * b.cols; ++i)
          params_[b.offset + i] = 0.0;
      for (const auto& g : {l.ln1_g, l.ln2_g})
        for (std::size_t i = 0; i < g.rows * g.cols; ++i)
          params_[g.offset + i] = 1.0;
    }
  }

  Eigen::Map<const Mat> view(const TensorRef& r) const {
    return {params_.data() + r.offset, static_cast<Eigen::Index>(r.rows),
            static_cast<Eigen::Index>(r.cols)};
  }
  Eigen::Map<Mat> gview(const TensorRef& r) {
    return {grads_.data() + r.offset, static_cast<Eigen::Index>(r.rows),
            static_cast<Eigen::Index>(r.cols)};
  }

  static double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  }
  static double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
           x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
  }

  static constexpr double kLnEps = 1e-5;

  // Row-wise LayerNorm. Stores x_hat and 1/std for the backward pass.
  void layer_norm(const Mat& x, const TensorRef& gamma_ref,
                  const TensorRef& beta_ref, Mat& y, Mat& xhat,
                  Eigen::VectorXd& inv_std) const {
    const auto gamma = view(gamma_ref);
    const auto beta = view(beta_ref);
    const auto d = static_cast<double>(x.cols());
    y.resizeLike(x);
    xhat.resizeLike(x);
    inv_std.resize(x.rows());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const double mean = x.row(t).mean();
      const double var = (x.row(t).array() - mean).square().sum() / d;
      inv_std(t) = 1.0 / std::sqrt(var + kLnEps);
      xhat.row(t) = (x.row(t).array() - mean) * inv_std(t);
      y.row(t) =
          xhat.row(t).cwiseProduct(gamma.row(0)) + beta.row(0);
    }
  }

  void layer_norm_backward(const Mat& xhat, const Eigen::VectorXd& inv_std,
                           const TensorRef& gamma_ref, const Mat& dy, Mat& dx,
                           const TensorRef& dgamma_ref,
                           const TensorRef& dbeta_ref) {
    const auto gamma = view(gamma_ref);
    auto dgamma = gview(dgamma_ref);
    auto dbeta = gview(dbeta_ref);
    const auto d = static_cast<double>(xhat.cols());
    dx.resizeLike(xhat);
    for (Eigen::Index t = 0; t < xhat.rows(); ++t) {
      const Eigen::RowVectorXd dxhat =
          dy.row(t).cwiseProduct(gamma.row(0));
      const double sum_dxhat = dxhat.sum();
      const double sum_dxhat_xhat = dxhat.cwiseProduct(xhat.row(t)).sum();
      dx.row(t) = ((dxhat.array() - sum_dxhat / d -
                    xhat.row(t).array() * (sum_dxhat_xhat / d)) *
                   inv_std(t))
                      .matrix();
      dgamma.row(0) += dy.row(t).cwiseProduct(xhat.row(t));
      dbeta.row(0) += dy.row(t);
    }
  }

  embedcore::Vector forward_one(const std::vector<std::uint64_t>& ids,
                                SeqCache& seq) const {
    if (ids.empty())
      throw std::invalid_argument("toy encoder: empty id sequence");
    if (ids.size() > cfg_.max_len)
      throw extract::SequenceTooLongError(ids.size(), cfg_.max_len);
    const auto T = static_cast<Eigen::Index>(ids.size());
    const auto D = static_cast<Eigen::Index>(cfg_.dim);
    const std::size_t dh = cfg_.dim / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    seq.ids = ids;
    Mat x(T, D);
    const auto tok = view(tok_emb_);
    const auto pos = view(pos_emb_);
    for (Eigen::Index t = 0; t < T; ++t)
      x.row(t) = tok.row(static_cast<Eigen::Index>(ids[t])) + pos.row(t);

    for (const auto& l : layers_) {
      seq.x_in.push_back(x);
      Mat q = (x * view(l.wq)).rowwise() + view(l.bq).row(0);
      Mat k = (x * view(l.wk)).rowwise() + view(l.bk).row(0);
      Mat v = (x * view(l.wv)).rowwise() + view(l.bv).row(0);
      Mat o(T, D);
      std::vector<Mat> probs(cfg_.heads);
      for (std::size_t h = 0; h < cfg_.heads; ++h) {
        const auto qh = q.middleCols(h * dh, dh);
        const auto kh = k.middleCols(h * dh, dh);
        Mat s = qh * kh.transpose() * scale;
        for (Eigen::Index r = 0; r < T; ++r) {
          const double m = s.row(r).maxCoeff();
          s.row(r) = (s.row(r).array() - m).exp().matrix();
          s.row(r) /= s.row(r).sum();
        }
        probs[h] = s;
        o.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
      }
      Mat a = (o * view(l.wo)).rowwise() + view(l.bo).row(0);
      Mat r1 = x + a;
      Mat y, xhat1;
      Eigen::VectorXd inv_std1;
      layer_norm(r1, l.ln1_g, l.ln1_b, y, xhat1, inv_std1);
      Mat f1 = (y * view(l.w1)).rowwise() + view(l.b1).row(0);
      Mat g = f1.unaryExpr([](double v_) { return gelu(v_); });
      Mat f2 = (g * view(l.w2)).rowwise() + view(l.b2).row(0);
      Mat r2 = y + f2;
      Mat x_out, xhat2;
      Eigen::VectorXd inv_std2;
      layer_norm(r2, l.ln2_g, l.ln2_b, x_out, xhat2, inv_std2);

      seq.q.push_back(std::move(q));
      seq.k.push_back(std::move(k));
      seq.v.push_back(std::move(v));
      seq.o.push_back(std::move(o));
      seq.attn.push_back(std::move(probs));
      seq.r1.push_back(std::move(r1));
      seq.y.push_back(std::move(y));
      seq.f1.push_back(std::move(f1));
      seq.g.push_back(std::move(g));
      seq.r2.push_back(std::move(r2));
      seq.xhat1.push_back(std::move(xhat1));
      seq.xhat2.push_back(std::move(xhat2));
      seq.inv_std1.push_back(std::move(inv_std1));
      seq.inv_std2.push_back(std::move(inv_std2));
      x = std::move(x_out);
    }
    seq.x_in.push_back(x);  // final representation
    Eigen::RowVectorXd pooled = x.colwise().mean();
    return embedcore::Vector(
        std::vector<double>(pooled.data(), pooled.data() + pooled.size()));
  }

  void backward_one(const SeqCache& seq, const embedcore::Vector& d_pooled) {
    const auto T = static_cast<Eigen::Index>(seq.ids.size());
    const auto D = static_cast<Eigen::Index>(cfg_.dim);
    if (d_pooled.dim() != cfg_.dim)
      throw std::invalid_argument("backward: pooled gradient dim mismatch");
    const std::size_t dh = cfg_.dim / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Mean pooling spreads the gradient uniformly over tokens.
    Mat dx(T, D);
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index u = 0; u < D; ++u)
        dx(t, u) = d_pooled[static_cast<std::size_t>(u)] /
                   static_cast<double>(T);

    for (std::size_t li = cfg_.layers; li-- > 0;) {
      const auto& l = layers_[li];
      Mat dr2;
      layer_norm_backward(seq.xhat2[li], seq.inv_std2[li], l.ln2_g, dx, dr2,
                          l.ln2_g, l.ln2_b);
      Mat dy = dr2;  // residual branch
      const Mat& g = seq.g[li];
      // f2 = g * w2 + b2
      Mat dg = dr2 * view(l.w2).transpose();
      gview(l.w2) += g.transpose() * dr2;
      gview(l.b2).row(0) += dr2.colwise().sum();
      // g = gelu(f1)
      Mat df1 =
          dg.cwiseProduct(seq.f1[li].unaryExpr([](double v_) {
            return gelu_grad(v_);
          }));
      // f1 = y * w1 + b1
      dy += df1 * view(l.w1).transpose();
      gview(l.w1) += seq.y[li].transpose() * df1;
      gview(l.b1).row(0) += df1.colwise().sum();

      Mat dr1;
      layer_norm_backward(seq.xhat1[li], seq.inv_std1[li], l.ln1_g, dy, dr1,
                          l.ln1_g, l.ln1_b);
      Mat dx_layer = dr1;  // residual branch
      // a = o * wo + bo
      Mat da = dr1;
      Mat do_ = da * view(l.wo).transpose();
      gview(l.wo) += seq.o[li].transpose() * da;
      gview(l.bo).row(0) += da.colwise().sum();

      Mat dq = Mat::Zero(T, D), dk = Mat::Zero(T, D), dv = Mat::Zero(T, D);
      for (std::size_t h = 0; h < cfg_.heads; ++h) {
        const auto off = static_cast<Eigen::Index>(h * dh);
        const auto w = static_cast<Eigen::Index>(dh);
        const Mat& p = seq.attn[li][h];
        const auto doh = do_.middleCols(off, w);
        const auto vh = seq.v[li].middleCols(off, w);
        Mat dp = doh * vh.transpose();
        dv.middleCols(off, w) = p.transpose() * doh;
        // softmax rows: ds = p .* (dp - rowsum(dp .* p))
        Mat ds(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          const double dot = dp.row(r).cwiseProduct(p.row(r)).sum();
          ds.row(r) =
              (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
        }
        const auto qh = seq.q[li].middleCols(off, w);
        const auto kh = seq.k[li].middleCols(off, w);
        dq.middleCols(off, w) = ds * kh * scale;
        dk.middleCols(off, w) = ds.transpose() * qh * scale;
      }
      const Mat& x_in = seq.x_in[li];
      dx_layer += dq * view(l.wq).transpose() + dk * view(l.wk).transpose() +
                  dv * view(l.wv).transpose();
      gview(l.wq) += x_in.transpose() * dq;
      gview(l.wk) += x_in.transpose() * dk;
      gview(l.wv) += x_in.transpose() * dv;
      gview(l.bq).row(0) += dq.colwise().sum();
      gview(l.bk).row(0) += dk.colwise().sum();
      gview(l.bv).row(0) += dv.colwise().sum();
      dx = std::move(dx_layer);
    }

    auto dtok = gview(tok_emb_);
    auto dpos = gview(pos_emb_);
    for (Eigen::Index t = 0; t < T; ++t) {
      dtok.row(static_cast<Eigen::Index>(seq.ids[t])) += dx.row(t);
      dpos.row(t) += dx.row(t);
    }
  }

  ToyEncoderConfig cfg_;
  extract::ChunkTokenizer tokenizer_;
  std::size_t total_ = 0;
  TensorRef tok_emb_, pos_emb_;
  std::vector<LayerRefs> layers_;
  std::vector<double> params_;
  std::vector<double> grads_;
};

}  // namespace matterrank::finetune
