#pragma once

#include <vector>

#include "gridlevels/errors.hpp"

namespace gridlevels {

/// Index map for the reduced state vector of dimension 3n-1.
///
/// Nodes are laid out in id order. Every node contributes the slots
/// (theta, omega, v) except the reference node, whose theta slot is removed;
/// it contributes (omega, v) only. Absolute ("full") states use the plain
/// interleaved layout of dimension 3n: node i owns slots 3i..3i+2.
class StateLayout {
public:
    StateLayout() = default;
    StateLayout(int n_nodes, int reference) : n_(n_nodes), ref_(reference) {
        if (reference < 0 || reference >= n_nodes)
            throw DimensionError("reference node index out of range");
        offsets_.resize(n_);
        int o = 0;
        for (int i = 0; i < n_; ++i) {
            offsets_[i] = o;
            o += (i == ref_) ? 2 : 3;
        }
        dim_ = o;
    }

    int node_count() const { return n_; }
    int reference() const { return ref_; }
    /// Reduced dimension 3n - 1.
    int dim() const { return dim_; }
    /// Full (absolute) dimension 3n.
    int full_dim() const { return 3 * n_; }

    bool has_theta(int i) const { return i != ref_; }

    int theta(int i) const {
        if (i == ref_) throw DimensionError("reference node has no theta slot");
        return offsets_[i];
    }
    int omega(int i) const { return offsets_[i] + (i == ref_ ? 0 : 1); }
    int v(int i) const { return offsets_[i] + (i == ref_ ? 1 : 2); }

    /// Dense index of node i's angle among the non-reference nodes, i.e. the
    /// row/column of i in the (n-1)-dimensional angle blocks.
    int theta_rank(int i) const {
        if (i == ref_) throw DimensionError("reference node has no theta rank");
        return i < ref_ ? i : i - 1;
    }

private:
    int n_ = 0;
    int ref_ = 0;
    int dim_ = 0;
    std::vector<int> offsets_;
};

}  // namespace gridlevels
