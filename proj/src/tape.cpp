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

#include "mclnf/tape.hpp"

#include "mclnf/errors.hpp"
#include "mclnf/kernels.hpp"

#include <algorithm>
#include <optional>
#include <string>

namespace mclnf::ad {

namespace {

void expect(bool cond, Op op, const std::string& what)
{
    if (!cond) {
        throw DimensionError(std::string(op_name(op)) + ": " + what);
    }
}

bool is_matrix(const Tensor& t)
{
    return t.rank() == 2;
}

Tensor t_matmul(const Tensor& a, const Tensor& b, bool ta, bool tb)
{
    expect(is_matrix(a) && is_matrix(b), Op::MatMul,
           "operands must be rank 2, got " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
    const std::size_t m = ta ? a.shape()[1] : a.shape()[0];
    const std::size_t k = ta ? a.shape()[0] : a.shape()[1];
    const std::size_t kb = tb ? b.shape()[1] : b.shape()[0];
    const std::size_t n = tb ? b.shape()[0] : b.shape()[1];
    expect(k == kb, Op::MatMul, "inner dimensions differ: " + shape_string(a.shape()) + " x " +
                                    shape_string(b.shape()));
    Tensor c(Shape{m, n});
    kernels::active().gemm(ta, tb, m, n, k, a.ptr(), b.ptr(), c.ptr());
    return c;
}

Tensor t_binary(Op op, const Tensor& a, const Tensor& b)
{
    expect(a.shape() == b.shape(), op, "shape mismatch " + shape_string(a.shape()) + " vs " +
                                           shape_string(b.shape()));
    Tensor out(a.shape());
    const auto& k = kernels::active();
    switch (op) {
    case Op::Add:
        k.add(a.size(), a.ptr(), b.ptr(), out.ptr());
        break;
    case Op::Sub:
        k.sub(a.size(), a.ptr(), b.ptr(), out.ptr());
        break;
    default:
        k.mul(a.size(), a.ptr(), b.ptr(), out.ptr());
        break;
    }
    return out;
}

Tensor t_unary(Op op, const Tensor& x, double s = 0.0)
{
    Tensor out(x.shape());
    const auto& k = kernels::active();
    const std::size_t n = x.size();
    switch (op) {
    case Op::Sin:
        k.sin(n, x.ptr(), out.ptr());
        break;
    case Op::Cos:
        k.cos(n, x.ptr(), out.ptr());
        break;
    case Op::Relu:
        k.relu(n, x.ptr(), out.ptr());
        break;
    case Op::Step:
        k.step(n, x.ptr(), out.ptr());
        break;
    case Op::Square:
        k.square(n, x.ptr(), out.ptr());
        break;
    default:
        k.scale(n, s, x.ptr(), out.ptr());
        break;
    }
    return out;
}

Tensor t_add_rowvec(const Tensor& x, const Tensor& b)
{
    expect(is_matrix(x), Op::AddRowVec, "input must be rank 2");
    expect(b.shape() == Shape{1, x.cols()}, Op::AddRowVec,
           "bias shape " + shape_string(b.shape()) + " does not fit " + shape_string(x.shape()));
    Tensor out(x.shape());
    kernels::active().add_rowvec(x.rows(), x.cols(), x.ptr(), b.ptr(), out.ptr());
    return out;
}

Tensor t_broadcast_rows(const Tensor& v, std::size_t rows)
{
    expect(v.rank() == 2 && v.rows() == 1, Op::BroadcastRows, "input must be (1, n)");
    Tensor out(Shape{rows, v.cols()});
    for (std::size_t i = 0; i < rows; ++i) {
        std::copy(v.ptr(), v.ptr() + v.cols(), out.ptr() + i * v.cols());
    }
    return out;
}

Tensor t_col_sums(const Tensor& x)
{
    expect(is_matrix(x), Op::ColSums, "input must be rank 2");
    Tensor out(Shape{1, x.cols()});
    kernels::active().col_sums(x.rows(), x.cols(), x.ptr(), out.ptr());
    return out;
}

Tensor t_row_sums(const Tensor& x)
{
    expect(is_matrix(x), Op::RowSums, "input must be rank 2");
    Tensor out(Shape{x.rows(), 1});
    kernels::active().row_sums(x.rows(), x.cols(), x.ptr(), out.ptr());
    return out;
}

Tensor t_broadcast_cols(const Tensor& v, std::size_t cols)
{
    expect(v.rank() == 2 && v.cols() == 1, Op::BroadcastCols, "input must be (m, 1)");
    Tensor out(Shape{v.rows(), cols});
    for (std::size_t i = 0; i < v.rows(); ++i) {
        std::fill(out.ptr() + i * cols, out.ptr() + (i + 1) * cols, v[i]);
    }
    return out;
}

Tensor t_fill(const Tensor& s, const Shape& shape)
{
    expect(s.rank() == 0, Op::Fill, "source must be a rank-0 scalar");
    return Tensor(shape, s[0]);
}

Tensor t_slice(const Tensor& x, std::size_t offset, const Shape& shape)
{
    const std::size_t n = shape_size(shape);
    expect(offset + n <= x.size(), Op::Slice, "range exceeds tensor of size " + std::to_string(x.size()));
    return Tensor(shape, std::vector<double>(x.ptr() + offset, x.ptr() + offset + n));
}

Tensor t_embed(const Tensor& x, std::size_t offset, const Shape& shape)
{
    Tensor out(shape);
    expect(offset + x.size() <= out.size(), Op::Embed, "range exceeds target " + shape_string(shape));
    std::copy(x.ptr(), x.ptr() + x.size(), out.ptr() + offset);
    return out;
}

} // namespace

const char* op_name(Op op)
{
    switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::AddRowVec: return "add_rowvec";
    case Op::BroadcastRows: return "broadcast_rows";
    case Op::ColSums: return "col_sums";
    case Op::RowSums: return "row_sums";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Relu: return "relu";
    case Op::Step: return "step";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Fill: return "fill";
    case Op::Slice: return "slice";
    case Op::Embed: return "embed";
    }
    return "?";
}

Tensor Tape::compute(const Node& n, const Tensor* a, const Tensor* b)
{
    switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
        return n.value;
    case Op::MatMul:
        return t_matmul(*a, *b, n.trans_a, n.trans_b);
    case Op::AddRowVec:
        return t_add_rowvec(*a, *b);
    case Op::BroadcastRows:
        return t_broadcast_rows(*a, n.offset);
    case Op::ColSums:
        return t_col_sums(*a);
    case Op::RowSums:
        return t_row_sums(*a);
    case Op::BroadcastCols:
        return t_broadcast_cols(*a, n.offset);
    case Op::Sin:
    case Op::Cos:
    case Op::Relu:
    case Op::Step:
    case Op::Square:
    case Op::Scale:
        return t_unary(n.op, *a, n.scalar);
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
        return t_binary(n.op, *a, *b);
    case Op::Sum:
        return Tensor::scalar(kernels::active().sum(a->size(), a->ptr()));
    case Op::Mean:
        expect(a->size() > 0, Op::Mean, "empty input");
        return Tensor::scalar(kernels::active().sum(a->size(), a->ptr()) / static_cast<double>(a->size()));
    case Op::Fill:
        return t_fill(*a, n.aux);
    case Op::Slice:
        return t_slice(*a, n.offset, n.aux);
    case Op::Embed:
        return t_embed(*a, n.offset, n.aux);
    }
    throw ContractError("unknown op");
}

Var Tape::push(Node node)
{
    const auto id = static_cast<std::int32_t>(nodes_.size());
    if (node.op != Op::Leaf && node.op != Op::Constant) {
        const Tensor* a = node.a >= 0 ? &nodes_[static_cast<std::size_t>(node.a)].value : nullptr;
        const Tensor* b = node.b >= 0 ? &nodes_[static_cast<std::size_t>(node.b)].value : nullptr;
        node.value = compute(node, a, b);
        node.requires_grad = (a && nodes_[static_cast<std::size_t>(node.a)].requires_grad) ||
                             (b && nodes_[static_cast<std::size_t>(node.b)].requires_grad);
        if (node.op == Op::Step) {
            node.requires_grad = false;
        }
    }
    if (!node.value.all_finite()) {
        throw NumericError("non-finite value produced by op #" + std::to_string(id) + " (" +
                           op_name(node.op) + ")");
    }
    nodes_.push_back(std::move(node));
    return Var{id};
}

const Tape::Node& Tape::node(Var v) const
{
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw ContractError("variable does not belong to this tape");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const
{
    return node(v).value;
}

Op Tape::op(Var v) const
{
    return node(v).op;
}

bool Tape::requires_grad(Var v) const
{
    return node(v).requires_grad;
}

Var Tape::leaf(Tensor value)
{
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = true;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::constant(Tensor value)
{
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

namespace {

template <class NodeT>
NodeT make(Op op, Var a, Var b = {})
{
    NodeT n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    return n;
}

} // namespace

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b)
{
    node(a), node(b);
    auto n = make<Node>(Op::MatMul, a, b);
    n.trans_a = trans_a;
    n.trans_b = trans_b;
    return push(std::move(n));
}

Var Tape::add_rowvec(Var x, Var bias)
{
    node(x), node(bias);
    return push(make<Node>(Op::AddRowVec, x, bias));
}

Var Tape::broadcast_rows(Var v, std::size_t rows)
{
    node(v);
    auto n = make<Node>(Op::BroadcastRows, v);
    n.offset = rows;
    return push(std::move(n));
}

Var Tape::col_sums(Var x)
{
    node(x);
    return push(make<Node>(Op::ColSums, x));
}

Var Tape::row_sums(Var x)
{
    node(x);
    return push(make<Node>(Op::RowSums, x));
}

Var Tape::broadcast_cols(Var v, std::size_t cols)
{
    node(v);
    auto n = make<Node>(Op::BroadcastCols, v);
    n.offset = cols;
    return push(std::move(n));
}

Var Tape::sin(Var x)
{
    node(x);
    return push(make<Node>(Op::Sin, x));
}

Var Tape::cos(Var x)
{
    node(x);
    return push(make<Node>(Op::Cos, x));
}

Var Tape::relu(Var x)
{
    node(x);
    return push(make<Node>(Op::Relu, x));
}

Var Tape::step(Var x)
{
    node(x);
    return push(make<Node>(Op::Step, x));
}

Var Tape::square(Var x)
{
    node(x);
    return push(make<Node>(Op::Square, x));
}

Var Tape::add(Var a, Var b)
{
    node(a), node(b);
    return push(make<Node>(Op::Add, a, b));
}

Var Tape::sub(Var a, Var b)
{
    node(a), node(b);
    return push(make<Node>(Op::Sub, a, b));
}

Var Tape::mul(Var a, Var b)
{
    node(a), node(b);
    return push(make<Node>(Op::Mul, a, b));
}

Var Tape::scale(Var x, double s)
{
    node(x);
    auto n = make<Node>(Op::Scale, x);
    n.scalar = s;
    return push(std::move(n));
}

Var Tape::sum(Var x)
{
    node(x);
    return push(make<Node>(Op::Sum, x));
}

Var Tape::mean(Var x)
{
    node(x);
    return push(make<Node>(Op::Mean, x));
}

Var Tape::fill(Var s, Shape shape)
{
    node(s);
    auto n = make<Node>(Op::Fill, s);
    n.aux = std::move(shape);
    return push(std::move(n));
}

Var Tape::slice(Var x, std::size_t offset, Shape shape)
{
    node(x);
    auto n = make<Node>(Op::Slice, x);
    n.offset = offset;
    n.aux = std::move(shape);
    return push(std::move(n));
}

Var Tape::embed(Var x, std::size_t offset, Shape shape)
{
    node(x);
    auto n = make<Node>(Op::Embed, x);
    n.offset = offset;
    n.aux = std::move(shape);
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward pass

struct NumericAlgebra {
    using Handle = Tensor;

    const Tape& tape;

    const Tensor& input(std::int32_t id) const { return tape.nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& value(const Tensor& h) const { return h; }

    Tensor ones(Var loss) const { return Tensor(tape.value(loss).shape(), 1.0); }
    Tensor zeros(Var v) const { return Tensor(tape.value(v).shape()); }

    Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) const { return t_matmul(a, b, ta, tb); }
    Tensor mul(const Tensor& a, const Tensor& b) const { return t_binary(Op::Mul, a, b); }
    Tensor scale(const Tensor& x, double s) const { return t_unary(Op::Scale, x, s); }
    Tensor sin(const Tensor& x) const { return t_unary(Op::Sin, x); }
    Tensor cos(const Tensor& x) const { return t_unary(Op::Cos, x); }
    Tensor step(const Tensor& x) const { return t_unary(Op::Step, x); }
    Tensor col_sums(const Tensor& x) const { return t_col_sums(x); }
    Tensor row_sums(const Tensor& x) const { return t_row_sums(x); }
    Tensor broadcast_rows(const Tensor& v, std::size_t r) const { return t_broadcast_rows(v, r); }
    Tensor broadcast_cols(const Tensor& v, std::size_t c) const { return t_broadcast_cols(v, c); }
    Tensor sum(const Tensor& x) const { return Tensor::scalar(kernels::active().sum(x.size(), x.ptr())); }
    Tensor fill(const Tensor& s, const Shape& shape) const { return t_fill(s, shape); }
    Tensor slice(const Tensor& x, std::size_t off, const Shape& shape) const { return t_slice(x, off, shape); }
    Tensor identity(const Tensor& g) const { return g; }

    void accumulate(std::optional<Tensor>& slot, Tensor contrib) const
    {
        if (!slot) {
            slot = std::move(contrib);
        } else {
            kernels::active().axpy(contrib.size(), 1.0, contrib.ptr(), slot->ptr());
        }
    }

    void accumulate_embed(std::optional<Tensor>& slot, const Tensor& g, std::size_t offset, const Shape& shape) const
    {
        if (!slot) {
            slot = Tensor(shape);
        }
        kernels::active().axpy(g.size(), 1.0, g.ptr(), slot->ptr() + offset);
    }
};

struct GraphAlgebra {
    using Handle = Var;

    Tape& tape;

    Var input(std::int32_t id) const { return Var{id}; }
    const Tensor& value(Var h) const { return tape.value(h); }

    Var ones(Var loss) const { return tape.constant(Tensor(tape.value(loss).shape(), 1.0)); }
    Var zeros(Var v) const { return tape.constant(Tensor(tape.value(v).shape())); }

    Var matmul(Var a, Var b, bool ta, bool tb) const { return tape.matmul(a, b, ta, tb); }
    Var mul(Var a, Var b) const { return tape.mul(a, b); }
    Var scale(Var x, double s) const { return tape.scale(x, s); }
    Var sin(Var x) const { return tape.sin(x); }
    Var cos(Var x) const { return tape.cos(x); }
    Var step(Var x) const { return tape.step(x); }
    Var col_sums(Var x) const { return tape.col_sums(x); }
    Var row_sums(Var x) const { return tape.row_sums(x); }
    Var broadcast_rows(Var v, std::size_t r) const { return tape.broadcast_rows(v, r); }
    Var broadcast_cols(Var v, std::size_t c) const { return tape.broadcast_cols(v, c); }
    Var sum(Var x) const { return tape.sum(x); }
    Var fill(Var s, const Shape& shape) const { return tape.fill(s, shape); }
    Var slice(Var x, std::size_t off, const Shape& shape) const { return tape.slice(x, off, shape); }
    Var identity(Var g) const { return g; }

    void accumulate(std::optional<Var>& slot, Var contrib) const
    {
        slot = slot ? tape.add(*slot, contrib) : contrib;
    }

    void accumulate_embed(std::optional<Var>& slot, Var g, std::size_t offset, const Shape& shape) const
    {
        accumulate(slot, tape.embed(g, offset, shape));
    }
};

template <class Algebra>
class Backward {
public:
    using Handle = typename Algebra::Handle;

    Backward(Algebra& alg, const Tape& tape) : alg_(alg), tape_(tape) {}

    std::vector<Handle> run(Var loss, std::span<const Var> wrt)
    {
        const auto& lossNode = tape_.node(loss);
        if (lossNode.value.size() != 1) {
            throw ContractError("backward: loss must be a scalar, got shape " +
                                shape_string(lossNode.value.shape()));
        }
        std::int32_t lowest = loss.id;
        for (Var w : wrt) {
            tape_.node(w);
            if (w.id > loss.id) {
                throw ContractError("backward: target recorded after the loss");
            }
            lowest = std::min(lowest, w.id);
        }
        lowest_ = lowest;
        adj_.assign(static_cast<std::size_t>(loss.id) + 1, std::nullopt);
        adj_[static_cast<std::size_t>(loss.id)] = alg_.ones(loss);

        for (std::int32_t i = loss.id; i >= lowest; --i) {
            auto& slot = adj_[static_cast<std::size_t>(i)];
            if (!slot) {
                continue;
            }
            // Copy the structural fields: the graph algebra appends to the
            // tape, which may reallocate the node storage.
            const auto& src = tape_.nodes_[static_cast<std::size_t>(i)];
            if (!src.requires_grad) {
                continue;
            }
            Info info{src.op, src.a, src.b, src.trans_a, src.trans_b, src.scalar, src.offset, src.aux};
            const Handle& g = *slot;
            propagate(info, g);
        }

        std::vector<Handle> out;
        out.reserve(wrt.size());
        for (Var w : wrt) {
            const auto& slot = adj_[static_cast<std::size_t>(w.id)];
            out.push_back(slot ? *slot : alg_.zeros(w));
        }
        return out;
    }

private:
    struct Info {
        Op op;
        std::int32_t a;
        std::int32_t b;
        bool trans_a;
        bool trans_b;
        double scalar;
        std::size_t offset;
        Shape aux;
    };

    bool needs(std::int32_t id) const
    {
        return id >= lowest_ && tape_.nodes_[static_cast<std::size_t>(id)].requires_grad;
    }

    void emit(std::int32_t id, Handle contrib) { alg_.accumulate(adj_[static_cast<std::size_t>(id)], std::move(contrib)); }

    const Shape& shape_of(std::int32_t id) const { return tape_.nodes_[static_cast<std::size_t>(id)].value.shape(); }

    void propagate(const Info& n, const Handle& g)
    {
        const bool need_a = n.a >= 0 && needs(n.a);
        const bool need_b = n.b >= 0 && needs(n.b);
        if (!need_a && !need_b) {
            return;
        }
        switch (n.op) {
        case Op::Leaf:
        case Op::Constant:
        case Op::Step:
            return;
        case Op::MatMul: {
            if (need_a) {
                emit(n.a, n.trans_a ? alg_.matmul(alg_.input(n.b), g, n.trans_b, true)
                                    : alg_.matmul(g, alg_.input(n.b), false, !n.trans_b));
            }
            if (need_b) {
                emit(n.b, n.trans_b ? alg_.matmul(g, alg_.input(n.a), true, n.trans_a)
                                    : alg_.matmul(alg_.input(n.a), g, !n.trans_a, false));
            }
            return;
        }
        case Op::AddRowVec:
            if (need_a) {
                emit(n.a, alg_.identity(g));
            }
            if (need_b) {
                emit(n.b, alg_.col_sums(g));
            }
            return;
        case Op::BroadcastRows:
            emit(n.a, alg_.col_sums(g));
            return;
        case Op::ColSums:
            emit(n.a, alg_.broadcast_rows(g, shape_of(n.a)[0]));
            return;
        case Op::RowSums:
            emit(n.a, alg_.broadcast_cols(g, shape_of(n.a)[1]));
            return;
        case Op::BroadcastCols:
            emit(n.a, alg_.row_sums(g));
            return;
        case Op::Sin:
            emit(n.a, alg_.mul(g, alg_.cos(alg_.input(n.a))));
            return;
        case Op::Cos:
            emit(n.a, alg_.scale(alg_.mul(g, alg_.sin(alg_.input(n.a))), -1.0));
            return;
        case Op::Relu:
            emit(n.a, alg_.mul(g, alg_.step(alg_.input(n.a))));
            return;
        case Op::Square:
            emit(n.a, alg_.scale(alg_.mul(g, alg_.input(n.a)), 2.0));
            return;
        case Op::Add:
            if (need_a) {
                emit(n.a, alg_.identity(g));
            }
            if (need_b) {
                emit(n.b, alg_.identity(g));
            }
            return;
        case Op::Sub:
            if (need_a) {
                emit(n.a, alg_.identity(g));
            }
            if (need_b) {
                emit(n.b, alg_.scale(g, -1.0));
            }
            return;
        case Op::Mul:
            if (need_a) {
                emit(n.a, alg_.mul(g, alg_.input(n.b)));
            }
            if (need_b) {
                emit(n.b, alg_.mul(g, alg_.input(n.a)));
            }
            return;
        case Op::Scale:
            emit(n.a, alg_.scale(g, n.scalar));
            return;
        case Op::Sum:
            emit(n.a, alg_.fill(g, shape_of(n.a)));
            return;
        case Op::Mean: {
            const Shape shape = shape_of(n.a);
            emit(n.a, alg_.scale(alg_.fill(g, shape), 1.0 / static_cast<double>(shape_size(shape))));
            return;
        }
        case Op::Fill:
            emit(n.a, alg_.sum(g));
            return;
        case Op::Slice: {
            const Shape shape = shape_of(n.a);
            alg_.accumulate_embed(adj_[static_cast<std::size_t>(n.a)], g, n.offset, shape);
            return;
        }
        case Op::Embed: {
            const Shape shape = shape_of(n.a);
            emit(n.a, alg_.slice(g, n.offset, shape));
            return;
        }
        }
    }

    Algebra& alg_;
    const Tape& tape_;
    std::int32_t lowest_ = 0;
    std::vector<std::optional<Handle>> adj_;
};

std::vector<Tensor> Tape::gradient(Var loss, std::span<const Var> wrt) const
{
    NumericAlgebra alg{*this};
    return Backward<NumericAlgebra>(alg, *this).run(loss, wrt);
}

Tensor Tape::gradient(Var loss, Var wrt) const
{
    const Var targets[] = {wrt};
    return std::move(gradient(loss, targets).front());
}

std::vector<Var> Tape::gradient_graph(Var loss, std::span<const Var> wrt)
{
    GraphAlgebra alg{*this};
    return Backward<GraphAlgebra>(alg, *this).run(loss, wrt);
}

Var Tape::gradient_graph(Var loss, Var wrt)
{
    const Var targets[] = {wrt};
    return gradient_graph(loss, targets).front();
}

Tensor Tape::per_sample_gradients(std::span<const Var> losses, Var wrt) const
{
    const std::size_t n = value(wrt).size();
    Tensor out(Shape{losses.size(), n});
    for (std::size_t b = 0; b < losses.size(); ++b) {
        const Tensor g = gradient(losses[b], wrt);
        std::copy(g.ptr(), g.ptr() + n, out.ptr() + b * n);
    }
    return out;
}

std::vector<Tensor> Tape::replay(std::span<const std::pair<Var, Tensor>> overrides) const
{
    std::vector<Tensor> values;
    values.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.op == Op::Leaf || n.op == Op::Constant) {
            Tensor v = n.value;
            for (const auto& [var, replacement] : overrides) {
                if (static_cast<std::size_t>(var.id) == i) {
                    if (!replacement.same_shape(n.value)) {
                        throw DimensionError("replay override has the wrong shape");
                    }
                    v = replacement;
                }
            }
            values.push_back(std::move(v));
            continue;
        }
        const Tensor* a = n.a >= 0 ? &values[static_cast<std::size_t>(n.a)] : nullptr;
        const Tensor* b = n.b >= 0 ? &values[static_cast<std::size_t>(n.b)] : nullptr;
        values.push_back(compute(n, a, b));
    }
    return values;
}

Tensor meta_gradient(const Tensor& theta0, std::size_t k, double eta, const LossFn& inner, const LossFn& outer,
                     Order order)
{
    Tape tape;
    const Var leaf = tape.leaf(theta0);
    Var theta = leaf;
    for (std::size_t j = 0; j < k; ++j) {
        if (order == Order::Second) {
            theta = tape.sub(theta, tape.scale(tape.gradient_graph(inner(tape, theta), theta), eta));
        } else {
            const Tensor g = tape.gradient(inner(tape, theta), theta);
            Tensor next = tape.value(theta);
            for (std::size_t i = 0; i < next.size(); ++i) {
                next[i] -= eta * g[i];
            }
            theta = tape.leaf(std::move(next));
        }
    }
    return tape.gradient(outer(tape, theta), order == Order::Second ? leaf : theta);
}

} // namespace mclnf::ad
