#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkf/corpus.hpp"
#include "dkf/encoder.hpp"

namespace dkf {

/// Model checkpoints are a single JSON document: hyperparameters, the
/// vocabulary in id order, and every trainable tensor with its shape.
/// Doubles are written with shortest-round-trip precision, so
/// load(save(model)) reproduces the model bit for bit and re-saving a loaded
/// checkpoint is byte-identical.
inline constexpr const char* kCheckpointFormat = "dkf-selector-checkpoint-v1";

namespace detail {

inline nlohmann::ordered_json tensor_to_json(const Matrix& m) {
  nlohmann::ordered_json t;
  t["shape"] = {m.rows, m.cols};
  t["data"] = m.data;
  return t;
}

inline nlohmann::ordered_json tensor_to_json(const std::vector<double>& v) {
  nlohmann::ordered_json t;
  t["shape"] = {v.size()};
  t["data"] = v;
  return t;
}

inline Matrix tensor_from_json(const nlohmann::json& t, const std::string& name) {
  if (!t.is_object() || !t.contains("shape") || !t.contains("data"))
    throw SchemaError("checkpoint tensor \"" + name + "\" must carry shape and data");
  const auto& shape = t.at("shape");
  if (!shape.is_array() || shape.size() != 2)
    throw SchemaError("checkpoint tensor \"" + name + "\" must have a rank-2 shape");
  Matrix m(shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>());
  const auto& data = t.at("data");
  if (!data.is_array() || data.size() != m.data.size())
    throw SchemaError("checkpoint tensor \"" + name + "\" data does not match its shape");
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = data.at(i).get<double>();
  return m;
}

inline std::vector<double> vector_from_json(const nlohmann::json& t, const std::string& name) {
  if (!t.is_object() || !t.contains("shape") || !t.contains("data"))
    throw SchemaError("checkpoint tensor \"" + name + "\" must carry shape and data");
  const auto& shape = t.at("shape");
  if (!shape.is_array() || shape.size() != 1)
    throw SchemaError("checkpoint tensor \"" + name + "\" must have a rank-1 shape");
  std::vector<double> v(shape.at(0).get<std::size_t>());
  const auto& data = t.at("data");
  if (!data.is_array() || data.size() != v.size())
    throw SchemaError("checkpoint tensor \"" + name + "\" data does not match its shape");
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = data.at(i).get<double>();
  return v;
}

}  // namespace detail

inline nlohmann::ordered_json checkpoint_to_json(const EncoderModel& m) {
  nlohmann::ordered_json doc;
  doc["format"] = kCheckpointFormat;
  nlohmann::ordered_json hp;
  hp["d"] = m.cfg.d;
  hp["d_ff"] = m.cfg.d_ff;
  hp["heads"] = m.cfg.heads;
  hp["layers"] = m.cfg.layers;
  hp["max_len"] = m.cfg.max_len;
  hp["seed"] = m.seed;
  doc["hyperparameters"] = hp;
  doc["vocabulary"] = m.tokenizer.id_to_token;
  nlohmann::ordered_json tensors;
  tensors["token_embeddings"] = detail::tensor_to_json(m.token_embeddings);
  tensors["position_embeddings"] = detail::tensor_to_json(m.position_embeddings);
  tensors["segment_embeddings"] = detail::tensor_to_json(m.segment_embeddings);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const auto& layer = m.layers[l];
    tensors[p + "wq"] = detail::tensor_to_json(layer.wq);
    tensors[p + "wk"] = detail::tensor_to_json(layer.wk);
    tensors[p + "wv"] = detail::tensor_to_json(layer.wv);
    tensors[p + "wo"] = detail::tensor_to_json(layer.wo);
    tensors[p + "ffn.w1"] = detail::tensor_to_json(layer.ffn.w1);
    tensors[p + "ffn.b1"] = detail::tensor_to_json(layer.ffn.b1);
    tensors[p + "ffn.w2"] = detail::tensor_to_json(layer.ffn.w2);
    tensors[p + "ffn.b2"] = detail::tensor_to_json(layer.ffn.b2);
  }
  doc["tensors"] = tensors;
  return doc;
}

inline EncoderModel checkpoint_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", std::string()) != kCheckpointFormat)
    throw SchemaError("not a selector checkpoint (missing or unknown format marker)");
  for (const char* key : {"hyperparameters", "vocabulary", "tensors"})
    if (!doc.contains(key))
      throw SchemaError(std::string("checkpoint is missing \"") + key + "\"");

  EncoderModel m;
  const auto& hp = doc.at("hyperparameters");
  for (const char* key : {"d", "d_ff", "heads", "layers", "max_len", "seed"})
    if (!hp.contains(key))
      throw SchemaError(std::string("checkpoint hyperparameters are missing \"") + key + "\"");
  m.cfg.d = hp.at("d").get<std::size_t>();
  m.cfg.d_ff = hp.at("d_ff").get<std::size_t>();
  m.cfg.heads = hp.at("heads").get<std::size_t>();
  m.cfg.layers = hp.at("layers").get<std::size_t>();
  m.cfg.max_len = hp.at("max_len").get<std::size_t>();
  m.seed = hp.at("seed").get<std::uint64_t>();

  const auto& vocab = doc.at("vocabulary");
  if (!vocab.is_array() || vocab.size() < 3)
    throw SchemaError("checkpoint vocabulary must list at least the reserved tokens");
  m.tokenizer.max_len = m.cfg.max_len;
  m.tokenizer.id_to_token = vocab.get<std::vector<std::string>>();
  for (std::size_t i = 0; i < m.tokenizer.id_to_token.size(); ++i)
    m.tokenizer.token_to_id[m.tokenizer.id_to_token[i]] = static_cast<int>(i);
  if (m.tokenizer.token_to_id.size() != m.tokenizer.id_to_token.size())
    throw SchemaError("checkpoint vocabulary contains duplicate tokens");

  const auto& tensors = doc.at("tensors");
  auto mat = [&tensors](const std::string& name) {
    if (!tensors.contains(name))
      throw SchemaError("checkpoint is missing tensor \"" + name + "\"");
    return detail::tensor_from_json(tensors.at(name), name);
  };
  auto vec = [&tensors](const std::string& name) {
    if (!tensors.contains(name))
      throw SchemaError("checkpoint is missing tensor \"" + name + "\"");
    return detail::vector_from_json(tensors.at(name), name);
  };
  m.token_embeddings = mat("token_embeddings");
  m.position_embeddings = mat("position_embeddings");
  m.segment_embeddings = mat("segment_embeddings");
  m.layers.resize(m.cfg.layers);
  for (std::size_t l = 0; l < m.cfg.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto& layer = m.layers[l];
    layer.wq = mat(p + "wq");
    layer.wk = mat(p + "wk");
    layer.wv = mat(p + "wv");
    layer.wo = mat(p + "wo");
    layer.ffn.w1 = mat(p + "ffn.w1");
    layer.ffn.b1 = vec(p + "ffn.b1");
    layer.ffn.w2 = mat(p + "ffn.w2");
    layer.ffn.b2 = vec(p + "ffn.b2");
  }

  if (m.token_embeddings.rows != m.tokenizer.vocab_size() || m.token_embeddings.cols != m.cfg.d)
    throw SchemaError("checkpoint token embedding shape disagrees with the vocabulary");
  if (m.position_embeddings.rows != m.cfg.max_len || m.position_embeddings.cols != m.cfg.d)
    throw SchemaError("checkpoint position embedding shape disagrees with max_len");
  if (m.segment_embeddings.rows != 2 || m.segment_embeddings.cols != m.cfg.d)
    throw SchemaError("checkpoint segment embedding shape must be 2 x d");
  m.validate();
  return m;
}

inline void save_checkpoint(const EncoderModel& m, const std::string& path) {
  write_file(path, checkpoint_to_json(m).dump(2) + "\n");
}

inline EncoderModel load_checkpoint(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, column = 1;
    detail::position_of_offset(text, e.byte > 0 ? e.byte - 1 : 0, line, column);
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), line, column);
  }
  return checkpoint_from_json(doc);
}

}  // namespace dkf
