#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mpct/common.hpp"

namespace mpct {

class Tape;

// Value + gradient storage for one node. Held behind shared_ptr so Tensor
// handles copy cheaply and tape records can keep nodes alive.
struct TensorData {
    std::vector<int> shape;
    std::vector<double> v; // values, row-major
    std::vector<double> g; // accumulated gradient, same layout as v
    Tape* tape = nullptr;  // non-owning; set when a tape tracks this node
    bool leaf = false;     // watched parameter (grad kept after backward)
    bool grad_touched = false; // backward reached this node this pass
    std::string name;          // optional, for parameters and diagnostics

    std::size_t numel() const { return v.size(); }
};

// Lightweight handle with shared ownership of the underlying node.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

    static Tensor zeros(const std::vector<int>& shape);
    static Tensor full(const std::vector<int>& shape, double value);
    static Tensor from_vector(const std::vector<int>& shape, const std::vector<double>& values);
    static Tensor scalar_value(double value);

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    std::size_t numel() const { return d_->v.size(); }
    std::vector<double>& values() { return d_->v; }
    const std::vector<double>& values() const { return d_->v; }
    std::vector<double>& grad() { return d_->g; }
    const std::vector<double>& grad() const { return d_->g; }
    double scalar() const;

    // Same values, no tape linkage: gradients never flow through the copy.
    Tensor detach() const;

    TensorData* node() const { return d_.get(); }
    const std::shared_ptr<TensorData>& ptr() const { return d_; }

  private:
    std::shared_ptr<TensorData> d_;
};

// One reverse-pass step. inputs/output keep the subgraph alive for replay.
struct TapeRecord {
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::shared_ptr<TensorData> output;
    std::function<void()> backward; // reads output->g, accumulates into inputs' g
    std::string op;                 // for diagnostics
};

// Records operations in creation order; creation order is already topological,
// so backward just replays the list in reverse. A record runs only when its
// output was reached from the loss (grad_touched), which prunes subgraphs the
// current phase does not differentiate.
class Tape {
  public:
    Tape() = default;
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Marks t as a leaf parameter whose gradient should survive backward.
    void watch(const Tensor& t);
    // Adopts an existing node (e.g. a detached constant) as a tracked input.
    void adopt(const Tensor& t);
    void record(TapeRecord rec);

    // Seeds d(loss)/d(loss)=1 and replays records in reverse. loss must be a
    // scalar produced on this tape.
    void backward(const Tensor& loss);
    void zero_grads();

    std::size_t size() const { return records_.size(); }
    const std::vector<Tensor>& watched() const { return watched_; }

  private:
    std::vector<TapeRecord> records_;
    std::vector<Tensor> watched_;
    std::vector<Tensor> adopted_;
};

// Global gradient mode: ops built while a NoGradGuard is alive record nothing.
bool grad_enabled();

class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

// Ordered collection of named parameters. Iteration order is insertion order,
// which fixes the optimizer state layout and the checkpoint layout.
class ParamSet {
  public:
    void add(const std::string& name, Tensor t);
    void merge(const ParamSet& other);
    Tensor get(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::size_t size() const { return items_.size(); }

    struct Item {
        std::string name;
        Tensor tensor;
    };
    const std::vector<Item>& items() const { return items_; }

  private:
    std::vector<Item> items_;
};

// Gradient snapshot taken after backward: one dense tensor per parameter (zeros
// when backward never reached it) plus the list of unreached names.
struct Gradients {
    std::vector<std::string> names;
    std::vector<Tensor> grads;
    std::vector<std::string> unreached;

    Tensor by_name(const std::string& name) const;
};

Gradients collect_gradients(const ParamSet& params);

// Throws NumericError naming `where` if any entry is NaN or Inf.
void check_finite(const std::vector<double>& vals, const std::string& where);

} // namespace mpct
