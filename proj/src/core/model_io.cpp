#include "neat/core/model_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "neat/core/errors.hpp"

namespace neat {
namespace {

void put_u32(std::vector<char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::vector<char>& buf, std::size_t& pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  }
  pos += 4;
  return v;
}

void put_floats(std::vector<char>& buf, std::span<const float> values) {
  for (float f : values) put_u32(buf, std::bit_cast<std::uint32_t>(f));
}

void get_floats(const std::vector<char>& buf, std::size_t& pos, std::span<float> out) {
  for (float& f : out) f = std::bit_cast<float>(get_u32(buf, pos));
}

// Visits every tensor in file order.
template <typename Model, typename Fn>
void for_each_tensor(Model& w, Fn&& fn) {
  fn(w.token_embedding.data);
  fn(w.position_embedding.data);
  for (auto& layer : w.layers) {
    fn(layer.attn_norm);
    fn(layer.wq.data);
    fn(layer.wk.data);
    fn(layer.wv.data);
    fn(layer.wo.data);
    fn(layer.fc1.data);
    fn(layer.fc2.data);
  }
  fn(w.final_norm);
  fn(w.unembedding.data);
}

ModelWeights shaped(const ModelDims& dims, Activation act) {
  ModelWeights w;
  w.dims = dims;
  w.activation = act;
  w.token_embedding = Matrix(dims.vocab, dims.d_model);
  w.position_embedding = Matrix(kMaxContext, dims.d_model);
  w.layers.resize(dims.layers);
  for (auto& layer : w.layers) {
    layer.attn_norm.assign(dims.d_model, 0.0f);
    layer.wq = Matrix(dims.d_model, dims.d_model);
    layer.wk = Matrix(dims.d_model, dims.d_model);
    layer.wv = Matrix(dims.d_model, dims.d_model);
    layer.wo = Matrix(dims.d_model, dims.d_model);
    layer.fc1 = Matrix(dims.d_ff, dims.d_model);
    layer.fc2 = Matrix(dims.d_model, dims.d_ff);
  }
  w.final_norm.assign(dims.d_model, 0.0f);
  w.unembedding = Matrix(dims.vocab, dims.d_model);
  return w;
}

}  // namespace

std::size_t model_file_size(const ModelDims& dims) {
  const std::size_t d = dims.d_model;
  const std::size_t per_layer = d + 4 * d * d + 2 * std::size_t{dims.d_ff} * d;
  const std::size_t floats = std::size_t{dims.vocab} * d + std::size_t{kMaxContext} * d +
                             dims.layers * per_layer + d + std::size_t{dims.vocab} * d;
  return kModelMagic.size() + 5 * 4 + floats * 4;
}

void save_model(const ModelWeights& weights, const std::filesystem::path& path) {
  validate(weights.dims);
  std::vector<char> buf;
  buf.reserve(model_file_size(weights.dims));
  buf.insert(buf.end(), kModelMagic.begin(), kModelMagic.end());
  const ModelDims& d = weights.dims;
  for (std::uint32_t v : {d.layers, d.d_model, d.d_ff, d.vocab, d.heads}) put_u32(buf, v);
  for_each_tensor(weights, [&](const std::vector<float>& t) { put_floats(buf, t); });

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

ModelWeights load_model(const std::filesystem::path& path, Activation act) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open model file " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const std::size_t header = kModelMagic.size() + 5 * 4;
  if (buf.size() < header || std::string_view(buf.data(), kModelMagic.size()) != kModelMagic) {
    fail(ErrorKind::kFormat, path.string() + ": not a NEATM1 model file");
  }
  std::size_t pos = kModelMagic.size();
  ModelDims dims;
  dims.layers = get_u32(buf, pos);
  dims.d_model = get_u32(buf, pos);
  dims.d_ff = get_u32(buf, pos);
  dims.vocab = get_u32(buf, pos);
  dims.heads = get_u32(buf, pos);
  validate(dims);
  const std::size_t expected = model_file_size(dims);
  if (buf.size() != expected) {
    fail(ErrorKind::kFormat, path.string() + ": length " + std::to_string(buf.size()) +
                                 " does not match dims (" + describe(dims) + ", expected " +
                                 std::to_string(expected) + ")");
  }

  ModelWeights w = shaped(dims, act);
  for_each_tensor(w, [&](std::vector<float>& t) {
    get_floats(buf, pos, t);
    for (float v : t) {
      if (!std::isfinite(v)) fail(ErrorKind::kFormat, path.string() + ": non-finite weight");
    }
  });
  return w;
}

}  // namespace neat
