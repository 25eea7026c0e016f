#include "eikfield/program.hpp"

#include <stdexcept>
#include <string>

namespace eikfield::ad {

int ParamStore::add(int rows, int cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("param tensor must have positive shape");
  weights_.push_back(Mat::Zero(rows, cols));
  biases_.push_back(Vec::Zero(rows));
  return static_cast<int>(weights_.size()) - 1;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& w : weights_) n += static_cast<std::size_t>(w.size());
  for (const auto& b : biases_) n += static_cast<std::size_t>(b.size());
  return n;
}

Program::Program(int input_width) {
  if (input_width < 1) throw std::invalid_argument("program input width must be >= 1");
  Op in;
  in.kind = OpKind::Input;
  in.width = input_width;
  ops_.push_back(std::move(in));
}

int Program::check_slot(int slot) const {
  if (slot < 0 || slot >= static_cast<int>(ops_.size())) {
    throw std::invalid_argument("program: reference to unknown slot " + std::to_string(slot));
  }
  return slot;
}

int Program::push(Op op) {
  ops_.push_back(std::move(op));
  return static_cast<int>(ops_.size()) - 1;
}

int Program::slice(int src, int offset, int width) {
  check_slot(src);
  if (offset < 0 || width < 1 || offset + width > width_of(src)) {
    throw std::invalid_argument("program: slice window out of range");
  }
  Op op;
  op.kind = OpKind::Slice;
  op.a = src;
  op.offset = offset;
  op.width = width;
  return push(std::move(op));
}

int Program::affine(int src, int param, const ParamStore& store) {
  check_slot(src);
  if (param < 0 || param >= store.count()) {
    throw std::invalid_argument("program: affine references unknown parameter tensor");
  }
  const Mat& w = store.weight(param);
  if (w.cols() != width_of(src)) {
    throw std::invalid_argument("program: affine weight columns do not match input width");
  }
  Op op;
  op.kind = OpKind::AffineParam;
  op.a = src;
  op.param = param;
  op.width = static_cast<int>(w.rows());
  return push(std::move(op));
}

int Program::affine_const(int src, Mat w) {
  check_slot(src);
  if (w.cols() != width_of(src)) {
    throw std::invalid_argument("program: constant matrix columns do not match input width");
  }
  if (w.rows() < 1) throw std::invalid_argument("program: constant matrix must have rows");
  Op op;
  op.kind = OpKind::AffineConst;
  op.a = src;
  op.width = static_cast<int>(w.rows());
  op.cw = std::move(w);
  return push(std::move(op));
}

int Program::apply(int src, Elem fn) {
  check_slot(src);
  switch (fn) {
    case Elem::Sin:
    case Elem::Cos:
    case Elem::Silu:
    case Elem::SoftplusOne:
    case Elem::Square:
    case Elem::Cube:
    case Elem::Sqrt:
    case Elem::Recip:
      break;
    default:
      throw std::invalid_argument("program: unsupported elementwise primitive");
  }
  Op op;
  op.kind = OpKind::Apply;
  op.a = src;
  op.fn = fn;
  op.width = width_of(src);
  return push(std::move(op));
}

namespace {
void check_same_width(const Program& p, int a, int b, const char* what) {
  if (p.width_of(a) != p.width_of(b)) {
    throw std::invalid_argument(std::string("program: ") + what + " operands differ in width");
  }
}
}  // namespace

int Program::vmax(int a, int b) {
  check_slot(a);
  check_slot(b);
  check_same_width(*this, a, b, "max");
  Op op;
  op.kind = OpKind::Max;
  op.a = a;
  op.b = b;
  op.width = width_of(a);
  return push(std::move(op));
}

int Program::vmin(int a, int b) {
  check_slot(a);
  check_slot(b);
  check_same_width(*this, a, b, "min");
  Op op;
  op.kind = OpKind::Min;
  op.a = a;
  op.b = b;
  op.width = width_of(a);
  return push(std::move(op));
}

int Program::vmul(int a, int b) {
  check_slot(a);
  check_slot(b);
  check_same_width(*this, a, b, "mul");
  Op op;
  op.kind = OpKind::Mul;
  op.a = a;
  op.b = b;
  op.width = width_of(a);
  return push(std::move(op));
}

int Program::vadd(int a, int b) {
  check_slot(a);
  check_slot(b);
  check_same_width(*this, a, b, "add");
  Op op;
  op.kind = OpKind::Add;
  op.a = a;
  op.b = b;
  op.width = width_of(a);
  return push(std::move(op));
}

int Program::concat(int a, int b) {
  check_slot(a);
  check_slot(b);
  Op op;
  op.kind = OpKind::Concat;
  op.a = a;
  op.b = b;
  op.width = width_of(a) + width_of(b);
  return push(std::move(op));
}

void Program::set_output(int slot) {
  check_slot(slot);
  if (width_of(slot) != 1) {
    throw std::invalid_argument("program: output slot must have width 1");
  }
  output_ = slot;
}

int Program::output() const {
  if (output_ < 0) throw std::logic_error("program: output slot never set");
  return output_;
}

int Program::width_of(int slot) const {
  check_slot(slot);
  return ops_[slot].width;
}

}  // namespace eikfield::ad
