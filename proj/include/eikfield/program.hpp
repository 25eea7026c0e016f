#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace eikfield::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Elementwise primitives. Each one carries closed-form first, second and
// third derivatives in the engine; anything not on this list cannot be
// expressed, which keeps differentiation exact by construction.
enum class Elem : std::uint8_t {
  Sin,
  Cos,
  Silu,
  SoftplusOne,  // softplus shifted so f(0) == 1; strictly positive output
  Square,
  Cube,
  Sqrt,   // input clamped to >= 1e-12, clamp treated as constant in derivatives
  Recip,
};

enum class OpKind : std::uint8_t {
  Input,
  Slice,
  AffineParam,  // W x + b with learnable W, b
  AffineConst,  // C x with a frozen matrix
  Apply,
  Max,  // elementwise; ties resolve to the first argument
  Min,
  Mul,
  Add,
  Concat,
};

// Learnable tensors. Several ops may reference the same entry, which is how
// weight sharing between network branches is expressed.
class ParamStore {
 public:
  int add(int rows, int cols);
  int count() const { return static_cast<int>(weights_.size()); }
  Mat& weight(int id) { return weights_.at(id); }
  const Mat& weight(int id) const { return weights_.at(id); }
  Vec& bias(int id) { return biases_.at(id); }
  const Vec& bias(int id) const { return biases_.at(id); }
  std::size_t scalar_count() const;

 private:
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
};

struct Op {
  OpKind kind = OpKind::Input;
  int a = -1;       // first operand slot
  int b = -1;       // second operand slot
  int width = 0;    // output width
  int param = -1;   // AffineParam tensor id
  int offset = 0;   // Slice row offset
  Elem fn = Elem::Sin;
  Mat cw;           // AffineConst matrix
};

// Straight-line vector program. Slot i holds the output of op i; op 0 is the
// input. All shape checking happens at construction so that evaluation can
// assume a well-formed graph.
class Program {
 public:
  explicit Program(int input_width);

  int input() const { return 0; }
  int input_width() const { return ops_[0].width; }

  int slice(int src, int offset, int width);
  int affine(int src, int param, const ParamStore& store);
  int affine_const(int src, Mat w);
  int apply(int src, Elem fn);
  int vmax(int a, int b);
  int vmin(int a, int b);
  int vmul(int a, int b);
  int vadd(int a, int b);
  int concat(int a, int b);

  // The output must be a single scalar row.
  void set_output(int slot);
  int output() const;

  const std::vector<Op>& ops() const { return ops_; }
  int width_of(int slot) const;

 private:
  int check_slot(int slot) const;
  int push(Op op);

  std::vector<Op> ops_;
  int output_ = -1;
};

}  // namespace eikfield::ad
