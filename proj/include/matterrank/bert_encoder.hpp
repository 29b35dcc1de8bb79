#pragma once

// Inference-only BERT encoder loaded from a released checkpoint directory:
//   config.json          architecture sizes
//   model.safetensors    float32 weights (HF layout, optional "bert." prefix)
//   vocab.txt            WordPiece vocabulary
// Produces all hidden-state layers (initial embedding layer + one per
// encoder block) for the content tokens; [CLS]/[SEP] are added for the
// forward pass and stripped from the returned grid. Single-threaded float32
// math, bit-reproducible for a fixed checkpoint.

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matterrank/encoder.hpp"

namespace matterrank::extract {

namespace safetensors {

struct TensorEntry {
  std::string dtype;
  std::vector<std::size_t> shape;
  std::size_t begin = 0, end = 0;  // relative to the data section
};

class File {
 public:
  static File load(const std::filesystem::path& path) {
    File f;
    f.raw_ = io::read_file(path);
    if (f.raw_.size() < 8)
      throw ModelError("safetensors file too small: " + path.string());
    std::uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i)
      header_len |= static_cast<std::uint64_t>(
                        static_cast<unsigned char>(f.raw_[i]))
                    << (8 * i);
    if (8 + header_len > f.raw_.size())
      throw ModelError("safetensors header overruns file: " + path.string());
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(f.raw_.substr(8, header_len));
    } catch (const std::exception& e) {
      throw ModelError("safetensors header is not JSON: " + path.string());
    }
    f.data_offset_ = 8 + header_len;
    for (const auto& [name, meta] : header.items()) {
      if (name == "__metadata__") continue;
      TensorEntry e;
      e.dtype = meta.at("dtype").get<std::string>();
      e.shape = meta.at("shape").get<std::vector<std::size_t>>();
      e.begin = meta.at("data_offsets").at(0).get<std::size_t>();
      e.end = meta.at("data_offsets").at(1).get<std::size_t>();
      if (f.data_offset_ + e.end > f.raw_.size())
        throw ModelError("safetensors tensor " + name + " overruns file");
      f.entries_.emplace(name, std::move(e));
    }
    return f;
  }

  bool contains(const std::string& name) const {
    return entries_.contains(name);
  }

  const TensorEntry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw ModelError("checkpoint lacks tensor: " + name);
    return it->second;
  }

  // F32 tensor as a row-major matrix; 1-D tensors come back as a single row.
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
  matrix(const std::string& name) const {
    const auto& e = entry(name);
    if (e.dtype != "F32")
      throw ModelError("tensor " + name + " has dtype " + e.dtype +
                       ", expected F32");
    std::size_t rows = 1, cols = 1;
    if (e.shape.size() == 1) {
      cols = e.shape[0];
    } else if (e.shape.size() == 2) {
      rows = e.shape[0];
      cols = e.shape[1];
    } else {
      throw ModelError("tensor " + name + " has unsupported rank");
    }
    const std::size_t count = rows * cols;
    if ((e.end - e.begin) != count * sizeof(float))
      throw ModelError("tensor " + name + " has inconsistent byte size");
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(
        static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::memcpy(m.data(), raw_.data() + data_offset_ + e.begin,
                count * sizeof(float));
    return m;
  }

 private:
  std::string raw_;
  std::size_t data_offset_ = 0;
  std::map<std::string, TensorEntry> entries_;
};

}  // namespace safetensors

class BertEncoder : public TokenEncoder {
 public:
  using Mat =
      Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Row = Eigen::Matrix<float, 1, Eigen::Dynamic, Eigen::RowMajor>;

  static BertEncoder load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
      throw ModelError("checkpoint directory not found: " + dir.string());
    nlohmann::json cfg;
    try {
      cfg = nlohmann::json::parse(io::read_file(dir / "config.json"));
    } catch (const std::exception& e) {
      throw ModelError("cannot read checkpoint config: " +
                       (dir / "config.json").string() + ": " + e.what());
    }
    BertEncoder enc(WordpieceVocab::from_file(dir / "vocab.txt"));
    enc.hidden_ = cfg.at("hidden_size").get<std::size_t>();
    enc.heads_ = cfg.at("num_attention_heads").get<std::size_t>();
    enc.intermediate_ = cfg.at("intermediate_size").get<std::size_t>();
    enc.num_layers_ = cfg.at("num_hidden_layers").get<std::size_t>();
    enc.max_positions_ = cfg.at("max_position_embeddings").get<std::size_t>();
    enc.ln_eps_ = cfg.value("layer_norm_eps", 1e-12);
    if (enc.hidden_ % enc.heads_ != 0)
      throw ModelError("hidden_size not divisible by attention heads");
    enc.model_id_ = cfg.value("_name_or_path", dir.filename().string());
    if (enc.model_id_.empty()) enc.model_id_ = dir.filename().string();

    const auto st = safetensors::File::load(dir / "model.safetensors");
    const std::string prefix =
        st.contains("bert.embeddings.word_embeddings.weight") ? "bert." : "";
    auto tensor = [&](const std::string& name) {
      return st.matrix(prefix + name);
    };
    enc.word_emb_ = tensor("embeddings.word_embeddings.weight");
    enc.pos_emb_ = tensor("embeddings.position_embeddings.weight");
    enc.type_emb_ = tensor("embeddings.token_type_embeddings.weight");
    enc.emb_ln_g_ = tensor("embeddings.LayerNorm.weight");
    enc.emb_ln_b_ = tensor("embeddings.LayerNorm.bias");
    for (std::size_t l = 0; l < enc.num_layers_; ++l) {
      const std::string base = "encoder.layer." + std::to_string(l) + ".";
      Layer layer;
      // torch Linear stores [out, in]; transpose once at load time.
      layer.wq = tensor(base + "attention.self.query.weight").transpose();
      layer.wk = tensor(base + "attention.self.key.weight").transpose();
      layer.wv = tensor(base + "attention.self.value.weight").transpose();
      layer.wo = tensor(base + "attention.output.dense.weight").transpose();
      layer.bq = tensor(base + "attention.self.query.bias");
      layer.bk = tensor(base + "attention.self.key.bias");
      layer.bv = tensor(base + "attention.self.value.bias");
      layer.bo = tensor(base + "attention.output.dense.bias");
      layer.ln1_g = tensor(base + "attention.output.LayerNorm.weight");
      layer.ln1_b = tensor(base + "attention.output.LayerNorm.bias");
      layer.w1 = tensor(base + "intermediate.dense.weight").transpose();
      layer.b1 = tensor(base + "intermediate.dense.bias");
      layer.w2 = tensor(base + "output.dense.weight").transpose();
      layer.b2 = tensor(base + "output.dense.bias");
      layer.ln2_g = tensor(base + "output.LayerNorm.weight");
      layer.ln2_b = tensor(base + "output.LayerNorm.bias");
      enc.layers_.push_back(std::move(layer));
    }
    const auto cls = enc.tokenizer_.vocab().id_of("[CLS]");
    const auto sep = enc.tokenizer_.vocab().id_of("[SEP]");
    if (!cls || !sep)
      throw ModelError("vocabulary lacks [CLS]/[SEP] special tokens");
    enc.cls_id_ = *cls;
    enc.sep_id_ = *sep;
    return enc;
  }

  TokenizedText tokenize_with_offsets(const std::string& text) const override {
    TokenizedText t = tokenizer_.tokenize(text);
    if (t.size() > max_sequence_length())
      throw SequenceTooLongError(t.size(), max_sequence_length());
    return t;
  }

  HiddenStates hidden_states(const TokenizedText& tokenized) const override {
    const std::size_t content = tokenized.size();
    if (content == 0) throw std::invalid_argument("hidden_states: no tokens");
    if (content > max_sequence_length())
      throw SequenceTooLongError(content, max_sequence_length());
    const auto T = static_cast<Eigen::Index>(content + 2);
    const auto D = static_cast<Eigen::Index>(hidden_);

    Mat x(T, D);
    for (Eigen::Index t = 0; t < T; ++t) {
      std::uint64_t id = cls_id_;
      if (t == T - 1)
        id = sep_id_;
      else if (t > 0)
        id = tokenized.ids[static_cast<std::size_t>(t - 1)];
      x.row(t) = word_emb_.row(static_cast<Eigen::Index>(id)) +
                 pos_emb_.row(t) + type_emb_.row(0);
    }
    layer_norm(x, emb_ln_g_, emb_ln_b_);

    HiddenStates out(num_layers_ + 1, content, hidden_);
    auto record = [&](std::size_t layer, const Mat& m) {
      for (std::size_t t = 0; t < content; ++t)
        for (std::size_t u = 0; u < hidden_; ++u)
          out.at(layer, t, u) = static_cast<double>(
              m(static_cast<Eigen::Index>(t + 1), static_cast<Eigen::Index>(u)));
    };
    record(0, x);

    const std::size_t dh = hidden_ / heads_;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    for (std::size_t l = 0; l < num_layers_; ++l) {
      const Layer& layer = layers_[l];
      Mat q = (x * layer.wq).rowwise() + layer.bq.row(0);
      Mat k = (x * layer.wk).rowwise() + layer.bk.row(0);
      Mat v = (x * layer.wv).rowwise() + layer.bv.row(0);
      Mat o(T, D);
      for (std::size_t h = 0; h < heads_; ++h) {
        const auto off = static_cast<Eigen::Index>(h * dh);
        const auto w = static_cast<Eigen::Index>(dh);
        Mat s = q.middleCols(off, w) * k.middleCols(off, w).transpose() * scale;
        for (Eigen::Index r = 0; r < T; ++r) {
          const float m = s.row(r).maxCoeff();
          s.row(r) = (s.row(r).array() - m).exp().matrix();
          s.row(r) /= s.row(r).sum();
        }
        o.middleCols(off, w) = s * v.middleCols(off, w);
      }
      Mat attn = (o * layer.wo).rowwise() + layer.bo.row(0);
      x += attn;
      layer_norm(x, layer.ln1_g, layer.ln1_b);
      Mat inter = (x * layer.w1).rowwise() + layer.b1.row(0);
      inter = inter.unaryExpr([](float v_) {
        return 0.5f * v_ * (1.0f + std::erf(v_ * 0.70710678118654752f));
      });
      Mat ffn = (inter * layer.w2).rowwise() + layer.b2.row(0);
      x += ffn;
      layer_norm(x, layer.ln2_g, layer.ln2_b);
      record(l + 1, x);
    }
    return out;
  }

  std::size_t hidden_size() const override { return hidden_; }
  std::size_t layer_count() const override { return num_layers_ + 1; }
  std::size_t max_sequence_length() const override {
    return max_positions_ - 2;  // room for [CLS] and [SEP]
  }
  std::string model_id() const override { return model_id_; }

 private:
  explicit BertEncoder(WordpieceVocab vocab) : tokenizer_(std::move(vocab)) {}

  void layer_norm(Mat& x, const Row& gamma, const Row& beta) const {
    const auto d = static_cast<float>(x.cols());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const float mean = x.row(t).mean();
      const float var = (x.row(t).array() - mean).square().sum() / d;
      const float inv = 1.0f / std::sqrt(var + static_cast<float>(ln_eps_));
      x.row(t) =
          (((x.row(t).array() - mean) * inv) * gamma.row(0).array() +
           beta.row(0).array())
              .matrix();
    }
  }

  struct Layer {
    Mat wq, wk, wv, wo;
    Row bq, bk, bv, bo;
    Row ln1_g, ln1_b;
    Mat w1, w2;
    Row b1, b2;
    Row ln2_g, ln2_b;
  };

  WordpieceTokenizer tokenizer_;
  std::size_t hidden_ = 0, heads_ = 0, intermediate_ = 0, num_layers_ = 0,
              max_positions_ = 0;
  double ln_eps_ = 1e-12;
  std::string model_id_;
  Mat word_emb_, pos_emb_, type_emb_;
  Row emb_ln_g_, emb_ln_b_;
  std::vector<Layer> layers_;
  std::uint64_t cls_id_ = 0, sep_id_ = 0;
};

}  // namespace matterrank::extract
