#include "imt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace imt {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidAxis: return "InvalidAxis";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::NoTape: return "NoTape";
    case ErrorCode::InvalidUtf8: return "InvalidUtf8";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::LineCountMismatch: return "LineCountMismatch";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::BatchMismatch: return "BatchMismatch";
    case ErrorCode::LengthExceeded: return "LengthExceeded";
    case ErrorCode::MaskAllFalse: return "MaskAllFalse";
    case ErrorCode::EmptyRow: return "EmptyRow";
    case ErrorCode::UnknownDistanceKind: return "UnknownDistanceKind";
    case ErrorCode::IndivisibleDim: return "IndivisibleDim";
    case ErrorCode::DuplicateModule: return "DuplicateModule";
    case ErrorCode::ParameterAliasing: return "ParameterAliasing";
    case ErrorCode::MissingModule: return "MissingModule";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::VocabFingerprintMismatch: return "VocabFingerprintMismatch";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::DecoderNotFrozen: return "DecoderNotFrozen";
    case ErrorCode::EmptyDevSet: return "EmptyDevSet";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

namespace {

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent <= 0) throw Error(ErrorCode::ShapeMismatch, "non-positive extent in " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  check_shape(shape);
  impl_->values.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<TensorImpl>()) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw Error(ErrorCode::ShapeMismatch, "value count does not match shape " + shape_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{static_cast<std::int64_t>(values.size())}, std::vector<double>(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> flat;
  std::int64_t cols = -1;
  for (const auto& row : rows) {
    if (cols >= 0 && static_cast<std::int64_t>(row.size()) != cols) {
      throw Error(ErrorCode::ShapeMismatch, "ragged rows");
    }
    cols = static_cast<std::int64_t>(row.size());
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor(Shape{static_cast<std::int64_t>(rows.size()), cols}, std::move(flat));
}

Tensor Tensor::uniform(Shape shape, double low, double high, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(low, high);
  for (auto& v : t.impl_->values) v = dist(rng);
  return t;
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  const auto r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw Error(ErrorCode::InvalidAxis, "axis out of range");
  return impl_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on non-scalar " + shape_string(shape()));
  return impl_->values[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<std::int64_t>(index.size()) != rank()) throw Error(ErrorCode::IndexOutOfRange, "rank mismatch");
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    const auto extent = impl_->shape[k++];
    if (i < 0 || i >= extent) throw Error(ErrorCode::IndexOutOfRange, "index out of range");
    flat = flat * extent + i;
  }
  return impl_->values[static_cast<std::size_t>(flat)];
}

ConstMatrixMap Tensor::matrix() const {
  const auto cols = impl_->shape.back();
  return ConstMatrixMap(impl_->values.data(), numel() / cols, cols);
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  if (!flag) impl_->grad.clear();
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->values.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->values = impl_->values;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  Tensor copy = detach();
  copy.impl_->requires_grad = impl_->requires_grad;
  return copy;
}

// ---------------------------------------------------------------------------
// Tape

namespace {

thread_local Tape* g_active_tape = nullptr;
// Live tapes on this thread, keyed by address, with their current generation.
thread_local std::unordered_map<const Tape*, std::uint64_t> g_live_tapes;
std::atomic<std::uint64_t> g_generation_counter{1};

std::uint64_t next_generation() { return g_generation_counter.fetch_add(1); }

}  // namespace

Tape::Tape() : generation_(next_generation()) { g_live_tapes[this] = generation_; }

Tape::~Tape() {
  g_live_tapes.erase(this);
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::clear() {
  nodes_.clear();
  generation_ = next_generation();
  g_live_tapes[this] = generation_;
}

void Tape::record(Node node) { nodes_.push_back(std::move(node)); }

bool Tensor::on_tape() const {
  if (!impl_ || impl_->tape == nullptr) return false;
  auto it = g_live_tapes.find(impl_->tape);
  return it != g_live_tapes.end() && it->second == impl_->tape_generation;
}

void Tape::backward(const Tensor& loss) {
  const auto last = loss.impl()->node;
  for (std::size_t i = 0; i <= last; ++i) nodes_[i].output->grad.clear();
  loss.impl()->grad.assign(1, 1.0);
  for (std::size_t i = last + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.output->grad.empty()) continue;
    node.backward(node.output->grad);
  }
}

void backward(const Tensor& loss, bool retain_tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorCode::NonScalarLoss, "backward requires a scalar loss");
  }
  if (!loss.on_tape()) throw Error(ErrorCode::NoTape, "loss is not linked to a live tape");
  Tape* tape = loss.impl()->tape;
  tape->backward(loss);
  if (!retain_tape) tape->clear();
}

namespace autograd {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

bool should_record(const std::vector<Tensor>& inputs) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

void record(Tensor& output, std::vector<Tensor> inputs, Tape::BackwardFn fn) {
  Tape* tape = g_active_tape;
  auto& impl = *output.impl();
  impl.requires_grad = true;
  impl.tape = tape;
  impl.tape_generation = tape->generation();
  impl.node = tape->size();
  Tape::Node node;
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.impl());
  node.output = output.impl();
  node.backward = std::move(fn);
  tape->record(std::move(node));
}

void accumulate(const Tensor& t, std::span<const double> delta) {
  if (!t.requires_grad()) return;
  auto& g = t.impl()->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace autograd

}  // namespace imt
