#include "pansharp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace pansharp {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'P', 'S', 'H', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

json shape_json(const Shape& s) { return json::array({s.n, s.c, s.h, s.w}); }

Shape shape_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("checkpoint tensor shape must have 4 entries");
  Shape s{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) throw FormatError("checkpoint tensor shape must be positive");
  return s;
}

void write_tensor(std::ofstream& f, const Tensor<float>& t) {
  f.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

Tensor<float> read_tensor(std::ifstream& f, const Shape& s) {
  Tensor<float> t(s);
  f.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!f) throw IntegrityError("checkpoint payload is truncated");
  return t;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  json h;
  h["format"] = 1;
  h["kind"] = kind;
  h["config_hash"] = config_hash;
  h["config"] = config;
  h["epoch"] = epoch;
  h["step"] = step;
  h["provenance"] = provenance;
  json ts = json::array();
  for (const auto& t : tensors) ts.push_back({{"name", t.name}, {"shape", shape_json(t.value.shape())}});
  h["tensors"] = ts;
  if (optimizer) {
    if (optimizer->m.size() != tensors.size() || optimizer->v.size() != tensors.size())
      throw IntegrityError("optimizer state does not match the tensor list");
    h["optimizer"] = {{"name", "adam"},
                      {"t", optimizer->t},
                      {"beta1", optimizer->beta1},
                      {"beta2", optimizer->beta2},
                      {"eps", optimizer->eps}};
  } else {
    h["optimizer"] = nullptr;
  }
  const std::string header = h.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f.write(kMagic, sizeof kMagic);
    const std::uint64_t len = header.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof len);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : tensors) write_tensor(f, t.value);
    if (optimizer) {
      for (const auto& m : optimizer->m) write_tensor(f, m);
      for (const auto& v : optimizer->v) write_tensor(f, v);
    }
    if (!f) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(path.string() + " is not a checkpoint");
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f || len > (1u << 28)) throw FormatError("checkpoint header length is invalid");
  std::string header(len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(len));
  if (!f) throw IntegrityError("checkpoint header is truncated");

  Checkpoint c;
  try {
    const json h = json::parse(header);
    if (h.at("format") != 1) throw FormatError("unsupported checkpoint format");
    c.kind = h.at("kind");
    c.config_hash = h.at("config_hash");
    c.config = h.at("config");
    c.epoch = h.at("epoch");
    c.step = h.at("step");
    c.provenance = h.at("provenance").get<std::map<std::string, std::string>>();
    std::vector<Shape> shapes;
    for (const auto& t : h.at("tensors")) {
      shapes.push_back(shape_from(t.at("shape")));
      c.tensors.push_back({t.at("name").get<std::string>(), Tensor<float>()});
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) c.tensors[i].value = read_tensor(f, shapes[i]);
    if (!h.at("optimizer").is_null()) {
      const auto& o = h.at("optimizer");
      OptimizerState s;
      s.t = o.at("t");
      s.beta1 = o.at("beta1");
      s.beta2 = o.at("beta2");
      s.eps = o.at("eps");
      for (const auto& sh : shapes) s.m.push_back(read_tensor(f, sh));
      for (const auto& sh : shapes) s.v.push_back(read_tensor(f, sh));
      c.optimizer = std::move(s);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (f.peek() != std::ifstream::traits_type::eof()) throw IntegrityError("checkpoint has trailing bytes");
  return c;
}

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw IntegrityError("checkpoint has no tensor '" + name + "'");
}

Checkpoint capture(const ParamList<float>& params, const Adam<float>* opt) {
  Checkpoint c;
  for (const auto& p : params) c.tensors.push_back({p.name, p.var.value()});
  if (opt) {
    OptimizerState s;
    s.t = opt->steps();
    s.beta1 = opt->beta1;
    s.beta2 = opt->beta2;
    s.eps = opt->eps;
    for (const auto& slot : opt->slots()) {
      s.m.push_back(slot.m);
      s.v.push_back(slot.v);
    }
    c.optimizer = std::move(s);
  }
  return c;
}

void restore(const Checkpoint& ckpt, const ParamList<float>& params, const std::string& prefix) {
  for (const auto& p : params) {
    const auto& src = ckpt.tensor(prefix + p.name);
    if (!(src.shape() == p.var.shape()))
      throw IntegrityError("tensor '" + prefix + p.name + "' has shape " + src.shape().str() + ", model expects " +
                           p.var.shape().str());
    p.var.mutable_value() = src;
  }
}

void restore_optimizer(const Checkpoint& ckpt, Adam<float>& opt) {
  if (!ckpt.optimizer) throw IntegrityError("checkpoint carries no optimizer state");
  const auto& s = *ckpt.optimizer;
  const auto& params = opt.params();
  if (s.m.size() != params.size()) throw IntegrityError("optimizer state size does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (ckpt.tensors[i].name != params[i].name) throw IntegrityError("optimizer state order does not match the model");
    opt.slots()[i].m = s.m[i];
    opt.slots()[i].v = s.v[i];
  }
  opt.set_steps(s.t);
  opt.beta1 = s.beta1;
  opt.beta2 = s.beta2;
  opt.eps = s.eps;
}

}  // namespace pansharp
