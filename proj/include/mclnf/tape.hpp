// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

// Tensor-level reverse-mode differentiation.
//
// A Tape is an append-only list of primitive ops. Every node stores its
// value, so the forward pass happens while the graph is recorded. Gradients
// come in two flavours:
//   gradient()        evaluates adjoints numerically;
//   gradient_graph()  records the adjoint computation as new nodes on the
//                     same tape, so the result can be differentiated again
//                     (this is what unrolled meta-gradients use).
// Both flavours share one set of backward rules.

#include "mclnf/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace mclnf::ad {

struct Var {
    std::int32_t id = -1;

    [[nodiscard]] bool valid() const { return id >= 0; }
    friend bool operator==(Var, Var) = default;
};

enum class Op : std::uint8_t {
    Leaf,
    Constant,
    MatMul,
    AddRowVec,
    BroadcastRows,
    ColSums,
    RowSums,
    BroadcastCols,
    Sin,
    Cos,
    Relu,
    Step,
    Add,
    Sub,
    Mul,
    Scale,
    Square,
    Sum,
    Mean,
    Fill,
    Slice,
    Embed,
};

const char* op_name(Op op);

class Tape {
public:
    Tape() = default;

    void reserve(std::size_t n) { nodes_.reserve(n); }

    // Differentiable input.
    Var leaf(Tensor value);
    // Non-differentiable input.
    Var constant(Tensor value);

    // op(a) * op(b) for rank-2 operands.
    Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
    // x(m, n) + bias(1, n) broadcast over rows.
    Var add_rowvec(Var x, Var bias);
    // v(1, n) -> (rows, n)
    Var broadcast_rows(Var v, std::size_t rows);
    // x(m, n) -> (1, n)
    Var col_sums(Var x);
    // x(m, n) -> (m, 1)
    Var row_sums(Var x);
    // v(m, 1) -> (m, cols)
    Var broadcast_cols(Var v, std::size_t cols);

    Var sin(Var x);
    Var cos(Var x);
    Var relu(Var x);
    // 1 where x > 0, else 0; has zero derivative.
    Var step(Var x);
    Var square(Var x);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var x, double s);

    // Full reductions to a rank-0 scalar.
    Var sum(Var x);
    Var mean(Var x);
    // Rank-0 scalar broadcast to `shape`.
    Var fill(Var s, Shape shape);

    // Flat elements [offset, offset + size(shape)) of x, viewed as `shape`.
    Var slice(Var x, std::size_t offset, Shape shape);
    // Zero tensor of `shape` with x written at flat `offset`.
    Var embed(Var x, std::size_t offset, Shape shape);

    [[nodiscard]] const Tensor& value(Var v) const;
    [[nodiscard]] Op op(Var v) const;
    [[nodiscard]] bool requires_grad(Var v) const;
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    // d(loss)/d(wrt) for a scalar loss; wrt may be any earlier node.
    [[nodiscard]] std::vector<Tensor> gradient(Var loss, std::span<const Var> wrt) const;
    [[nodiscard]] Tensor gradient(Var loss, Var wrt) const;

    // Same as gradient(), but the adjoint computation is appended to the
    // tape and the returned nodes are differentiable.
    std::vector<Var> gradient_graph(Var loss, std::span<const Var> wrt);
    Var gradient_graph(Var loss, Var wrt);

    // Row b of the result is the gradient of losses[b] alone, obtained by
    // one backward pass per loss node.
    [[nodiscard]] Tensor per_sample_gradients(std::span<const Var> losses, Var wrt) const;

    // Recompute every node in recording order. Overrides replace the value
    // of leaf/constant nodes; all other nodes are derived.
    [[nodiscard]] std::vector<Tensor> replay(std::span<const std::pair<Var, Tensor>> overrides = {}) const;

private:
    struct Node {
        Op op = Op::Leaf;
        std::int32_t a = -1;
        std::int32_t b = -1;
        bool trans_a = false;
        bool trans_b = false;
        bool requires_grad = false;
        double scalar = 0.0;
        std::size_t offset = 0;
        Shape aux;
        Tensor value;
    };

    template <class Algebra>
    friend class Backward;
    friend struct NumericAlgebra;
    friend struct GraphAlgebra;

    Var push(Node node);
    const Node& node(Var v) const;
    static Tensor compute(const Node& n, const Tensor* a, const Tensor* b);

    std::vector<Node> nodes_;
};

using LossFn = std::function<Var(Tape&, Var theta)>;

enum class Order { Second, First };

// Gradient of outer(theta_k) with respect to theta_0, where theta_{j+1} =
// theta_j - eta * grad inner(theta_j). Order::First treats theta_k as if it
// were theta_0 (drops all second-order terms). k = 0 gives the plain
// gradient of outer at theta_0 in both orders.
Tensor meta_gradient(const Tensor& theta0, std::size_t k, double eta, const LossFn& inner, const LossFn& outer,
                     Order order);

} // namespace mclnf::ad
