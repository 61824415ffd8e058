#include "evad/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "evad/error.hpp"

namespace evad {

ModelParams ModelParams::initialize(const Catalog& catalog, std::size_t dim, Rng& rng) {
  if (dim == 0) throw DataError("embedding dimension must be positive");
  const auto& schema = catalog.schema();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  ModelParams p;
  p.dim = dim;
  for (const auto& t : schema.entity_types()) {
    EmbeddingTable table(catalog.size(t.id), dim);
    for (auto& v : table.data) v = rng.normal(0.0, scale);
    p.embeddings.push_back(std::move(table));
  }
  for (const auto& spec : schema.event_types()) {
    EventTypeParams e;
    const auto n = spec.arity();
    e.signature = spec.signature;
    e.weights.assign(n * n, 0.0);
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) e.weight(j, i) = 1.0 / static_cast<double>(i);
    e.beta.resize(dim);
    for (auto& v : e.beta) v = rng.normal(0.0, scale);
    e.log_sigma.assign(n, 0.0);
    p.event_types.push_back(std::move(e));
  }
  return p;
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  ModelParams p = other;
  p.for_each(ParamMask::all(), [](ParamGroup, std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
  return p;
}

void ModelParams::sync_rows(const Catalog& catalog) {
  for (const auto& t : catalog.schema().entity_types()) {
    auto& table = embeddings.at(t.id);
    if (catalog.size(t.id) < table.rows) throw DataError("catalog has fewer entities than the parameters");
    table.resize_rows(catalog.size(t.id));
  }
}

void ModelParams::for_each(ParamMask mask, const std::function<void(ParamGroup, std::span<double>)>& fn) {
  if (mask.has(ParamGroup::Embeddings))
    for (auto& t : embeddings) fn(ParamGroup::Embeddings, t.data);
  for (auto& e : event_types) {
    if (mask.has(ParamGroup::Weights)) fn(ParamGroup::Weights, e.weights);
    if (mask.has(ParamGroup::Beta)) fn(ParamGroup::Beta, e.beta);
    if (mask.has(ParamGroup::LogSigma)) fn(ParamGroup::LogSigma, e.log_sigma);
  }
}

void ModelParams::for_each(ParamMask mask,
                           const std::function<void(ParamGroup, std::span<const double>)>& fn) const {
  const_cast<ModelParams*>(this)->for_each(
      mask, [&](ParamGroup g, std::span<double> t) { fn(g, std::span<const double>(t)); });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each(ParamMask::all(), [&](ParamGroup, std::span<const double> t) { n += t.size(); });
  return n;
}

// ---------------------------------------------------------------------------

void context_vector_into(const EventTypeParams& params, std::size_t position,
                         const std::vector<std::span<const double>>& prefix, std::span<double> out) {
  if (position < 1 || position >= params.arity()) throw DataError("context position out of range");
  if (prefix.size() < position) throw DataError("context prefix too short");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < position; ++j) {
    if (prefix[j].size() != out.size()) throw DataError("embedding dimension mismatch");
    const double w = params.weight(j, position);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w * prefix[j][k];
  }
}

std::vector<double> context_vector(const EventTypeParams& params, std::size_t position,
                                   const std::vector<std::span<const double>>& prefix) {
  if (prefix.empty()) throw DataError("context prefix too short");
  std::vector<double> h(prefix.front().size());
  context_vector_into(params, position, prefix, h);
  return h;
}

double affinity_logit(std::span<const double> candidate, std::span<const double> context,
                      std::span<const double> beta) {
  if (candidate.size() != context.size() || beta.size() != context.size())
    throw DataError("affinity dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < beta.size(); ++k) s += beta[k] * candidate[k] * context[k];
  if (!std::isfinite(s)) throw NumericError("non-finite affinity");
  return std::clamp(s, -kLogitClamp, kLogitClamp);
}

double affinity(std::span<const double> candidate, std::span<const double> context,
                std::span<const double> beta) {
  return std::exp(affinity_logit(candidate, context, beta));
}

std::vector<double> event_context(const ModelParams& params, const Event& event, std::size_t position) {
  const auto& tp = params.event_types.at(event.type);
  std::vector<std::span<const double>> prefix;
  for (std::size_t j = 0; j < position; ++j)
    prefix.push_back(params.embeddings.at(tp.signature[j]).row(event.entities.at(j)));
  std::vector<double> h(params.dim);
  context_vector_into(tp, position, prefix, h);
  return h;
}

std::vector<double> conditional_distribution(const ModelParams& params, EventTypeId type,
                                             std::size_t position, std::span<const EntityId> prefix) {
  const auto& tp = params.event_types.at(type);
  if (position < 1 || position >= tp.arity()) throw DataError("position out of range");
  if (prefix.size() < position) throw DataError("prefix too short");
  std::vector<std::span<const double>> rows;
  for (std::size_t j = 0; j < position; ++j) {
    const auto& table = params.embeddings.at(tp.signature[j]);
    if (prefix[j] >= table.rows) throw DataError("prefix entity has no embedding");
    rows.push_back(table.row(prefix[j]));
  }
  std::vector<double> h(params.dim);
  context_vector_into(tp, position, rows, h);

  const auto& candidates = params.embeddings.at(tp.signature[position]);
  if (candidates.rows == 0) throw DataError("empty candidate set");
  std::vector<double> p(candidates.rows);
  double max_logit = -kLogitClamp;
  for (std::size_t v = 0; v < candidates.rows; ++v) {
    p[v] = affinity_logit(candidates.row(v), h, tp.beta);
    max_logit = std::max(max_logit, p[v]);
  }
  double total = 0.0;
  for (auto& x : p) {
    x = std::exp(x - max_logit);
    total += x;
  }
  for (auto& x : p) x /= total;
  return p;
}

double conditional_probability(const ModelParams& params, EventTypeId type, std::size_t position,
                               std::span<const EntityId> prefix, EntityId candidate) {
  auto dist = conditional_distribution(params, type, position, prefix);
  if (candidate >= dist.size()) throw DataError("candidate is not a known entity");
  return dist[candidate];
}

double event_log_probability(const ModelParams& params, const Event& event) {
  const auto& tp = params.event_types.at(event.type);
  if (event.entities.size() != tp.arity()) throw DataError("event arity does not match its type");
  double lp = 0.0;
  for (std::size_t i = 1; i < tp.arity(); ++i)
    lp += std::log(conditional_probability(params, event.type, i, event.entities, event.entities[i]));
  return lp;
}

// ---------------------------------------------------------------------------
// Snapshot: magic, u32 version, then little-endian fields.

namespace {

constexpr char kMagic[8] = {'E', 'V', 'A', 'D', 'P', 'R', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_f64s(std::ostream& out, std::span<const double> values) {
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated parameter snapshot");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated parameter snapshot");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::vector<double> get_f64s(std::istream& in, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = std::bit_cast<double>(get_u64(in));
  return v;
}

// Guards allocations when reading untrusted sizes.
std::uint64_t checked_size(std::uint64_t n) {
  if (n > (std::uint64_t{1} << 34)) throw DataError("corrupt parameter snapshot (size field)");
  return n;
}

}  // namespace

void save_params(const ModelParams& params, std::ostream& out) {
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u64(out, params.dim);
  put_u64(out, params.embeddings.size());
  for (const auto& t : params.embeddings) {
    put_u64(out, t.rows);
    put_f64s(out, t.data);
  }
  put_u64(out, params.event_types.size());
  for (const auto& e : params.event_types) {
    put_u64(out, e.arity());
    for (auto s : e.signature) put_u32(out, s);
    put_f64s(out, e.weights);
    put_f64s(out, e.beta);
    put_f64s(out, e.log_sigma);
  }
}

ModelParams load_params(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw DataError("not a parameter snapshot");
  if (auto v = get_u32(in); v != kVersion) throw DataError("unsupported snapshot version " + std::to_string(v));
  ModelParams p;
  p.dim = checked_size(get_u64(in));
  const auto n_entity_types = checked_size(get_u64(in));
  for (std::uint64_t t = 0; t < n_entity_types; ++t) {
    EmbeddingTable table(checked_size(get_u64(in)), p.dim);
    table.data = get_f64s(in, table.rows * p.dim);
    p.embeddings.push_back(std::move(table));
  }
  const auto n_event_types = checked_size(get_u64(in));
  for (std::uint64_t e = 0; e < n_event_types; ++e) {
    EventTypeParams tp;
    const auto n = checked_size(get_u64(in));
    for (std::uint64_t i = 0; i < n; ++i) tp.signature.push_back(get_u32(in));
    tp.weights = get_f64s(in, n * n);
    tp.beta = get_f64s(in, p.dim);
    tp.log_sigma = get_f64s(in, n);
    p.event_types.push_back(std::move(tp));
  }
  return p;
}

void save_params(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  save_params(params, out);
}

ModelParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return load_params(in);
}

}  // namespace evad
