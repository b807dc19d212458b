#pragma once

// Gaussian influence diagrams: a joint Gaussian stored as a DAG of scalar
// nodes in topological order. Node j satisfies
//
//   x_j - mean_j = sum_{k<j} arcs(k, j) * (x_k - mean_k) + eps_j,
//   eps_j ~ N(0, cond_vars(j)),
//
// so arcs is strictly upper triangular and the implied covariance is
// (I - B)^-T diag(V) (I - B)^-1.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace idjpda {

using Index = Eigen::Index;

/// Stable identity of the semantic variable held by a node.
enum class NodeLabel : std::int32_t {};

[[nodiscard]] constexpr NodeLabel label(std::int32_t v) noexcept { return NodeLabel{v}; }
[[nodiscard]] constexpr std::int32_t to_int(NodeLabel l) noexcept { return static_cast<std::int32_t>(l); }

class GaussianIdError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Evidence contradicts a deterministic node.
class InconsistentEvidence : public GaussianIdError {
public:
    using GaussianIdError::GaussianIdError;
};

/// A residual has a component off the support of a degenerate Gaussian.
class DeterministicDirection : public GaussianIdError {
public:
    using GaussianIdError::GaussianIdError;
};

/// Numerical thresholds used by the conversions and graph operations.
struct Tolerances {
    double symmetry = 1e-12;     // relative, on |X - X^T|
    double indefinite = 1e-10;   // V_j below -indefinite * max|diag| rejects
    double clamp = 1e-12;        // V_j below clamp * trace / n is set to 0
    double on_support = 1e-9;    // residual slack along deterministic nodes
    double evidence = 1e-9;      // relative slack for evidence on V = 0 nodes
};

/// Gaussian in moment form.
class MomentGaussian {
public:
    MomentGaussian() = default;

    MomentGaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov)
        : mean_(std::move(mean)), cov_(std::move(cov)) {
        if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size())
            throw GaussianIdError("MomentGaussian: mean/covariance dimension mismatch");
    }

    [[nodiscard]] Index size() const noexcept { return mean_.size(); }
    [[nodiscard]] const Eigen::VectorXd& mean() const noexcept { return mean_; }
    [[nodiscard]] const Eigen::MatrixXd& cov() const noexcept { return cov_; }

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
};

/// Gaussian in influence-diagram form (mean, B, V) with per-node labels.
class GaussianID {
public:
    GaussianID() = default;

    GaussianID(Eigen::VectorXd mean, Eigen::MatrixXd arcs, Eigen::VectorXd cond_vars,
               std::vector<NodeLabel> labels)
        : mean_(std::move(mean)), arcs_(std::move(arcs)), cond_vars_(std::move(cond_vars)),
          labels_(std::move(labels)) {
        validate();
    }

    /// Labels default to 0..n-1.
    GaussianID(Eigen::VectorXd mean, Eigen::MatrixXd arcs, Eigen::VectorXd cond_vars)
        : mean_(std::move(mean)), arcs_(std::move(arcs)), cond_vars_(std::move(cond_vars)),
          labels_(default_labels(mean_.size())) {
        validate();
    }

    [[nodiscard]] Index size() const noexcept { return mean_.size(); }
    [[nodiscard]] const Eigen::VectorXd& mean() const noexcept { return mean_; }
    [[nodiscard]] const Eigen::MatrixXd& arcs() const noexcept { return arcs_; }
    [[nodiscard]] const Eigen::VectorXd& cond_vars() const noexcept { return cond_vars_; }
    [[nodiscard]] const std::vector<NodeLabel>& labels() const noexcept { return labels_; }

    [[nodiscard]] double arc(Index from, Index to) const { return arcs_(from, to); }

    /// Position of a label, or -1.
    [[nodiscard]] Index index_of(NodeLabel l) const noexcept {
        auto it = std::find(labels_.begin(), labels_.end(), l);
        return it == labels_.end() ? Index{-1} : static_cast<Index>(it - labels_.begin());
    }

    [[nodiscard]] static std::vector<NodeLabel> default_labels(Index n) {
        std::vector<NodeLabel> out(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = label(static_cast<std::int32_t>(i));
        return out;
    }

private:
    void validate() const {
        const Index n = mean_.size();
        if (arcs_.rows() != n || arcs_.cols() != n || cond_vars_.size() != n ||
            static_cast<Index>(labels_.size()) != n)
            throw GaussianIdError("GaussianID: dimension mismatch");
        for (Index j = 0; j < n; ++j) {
            if (!(cond_vars_(j) >= 0.0))
                throw GaussianIdError("GaussianID: negative conditional variance");
            for (Index k = j; k < n; ++k)
                if (arcs_(k, j) != 0.0)
                    throw GaussianIdError("GaussianID: arcs must be strictly upper triangular");
        }
    }

    Eigen::VectorXd mean_;
    Eigen::MatrixXd arcs_;
    Eigen::VectorXd cond_vars_;
    std::vector<NodeLabel> labels_;
};

struct Observation {
    Index node;
    double value;
};

/// Posterior of an evidence entry plus d(posterior mean)/d(observed values).
struct ConditionedID {
    GaussianID posterior;
    Eigen::MatrixXd gain;
};

namespace detail {

// Mutable working copy used by the graph operations. Every public operation
// copies its input into one of these, edits in place, and freezes the result.
struct IdWorkspace {
    Eigen::VectorXd mean;
    Eigen::MatrixXd arcs;
    Eigen::VectorXd vars;
    std::vector<NodeLabel> labels;
    // Optional per-node sensitivity rows carried alongside the mean.
    Eigen::MatrixXd sens;

    explicit IdWorkspace(const GaussianID& g, Index sens_cols = 0)
        : mean(g.mean()), arcs(g.arcs()), vars(g.cond_vars()), labels(g.labels()),
          sens(Eigen::MatrixXd::Zero(g.size(), sens_cols)) {}

    [[nodiscard]] Index size() const noexcept { return mean.size(); }

    [[nodiscard]] GaussianID freeze() && {
        return GaussianID(std::move(mean), std::move(arcs), std::move(vars), std::move(labels));
    }

    [[nodiscard]] bool has_children(Index j) const {
        const Index n = size();
        return n - j - 1 > 0 && (arcs.row(j).tail(n - j - 1).array() != 0.0).any();
    }

    [[nodiscard]] Index first_child(Index j) const {
        for (Index c = j + 1; c < size(); ++c)
            if (arcs(j, c) != 0.0) return c;
        return -1;
    }

    [[nodiscard]] Index child_count(Index j) const {
        Index count = 0;
        for (Index c = j + 1; c < size(); ++c)
            if (arcs(j, c) != 0.0) ++count;
        return count;
    }

    [[nodiscard]] Index last_parent(Index j) const {
        for (Index k = j - 1; k >= 0; --k)
            if (arcs(k, j) != 0.0) return k;
        return -1;
    }

    void swap_positions(Index p) {
        // p and p+1 carry no arc between them.
        arcs.row(p).swap(arcs.row(p + 1));
        arcs.col(p).swap(arcs.col(p + 1));
        std::swap(mean(p), mean(p + 1));
        std::swap(vars(p), vars(p + 1));
        std::swap(labels[static_cast<std::size_t>(p)], labels[static_cast<std::size_t>(p + 1)]);
        if (sens.cols() > 0) sens.row(p).swap(sens.row(p + 1));
    }

    // Reverse the arc between adjacent positions p -> p+1. Afterwards the
    // former child sits at p and the former parent at p+1; both inherit each
    // other's parents.
    void reverse_adjacent(Index p) {
        const Index q = p + 1;
        const double b = arcs(p, q);
        const double vi = vars(p);
        const double vj = vars(q);
        const double vj_new = vj + b * b * vi;
        double b_rev = 0.0;
        double vi_new = 0.0;
        if (vj_new > 0.0) {
            b_rev = b * vi / vj_new;
            vi_new = vi * vj / vj_new;
        } else {
            // Both nodes deterministic: the parent is an exact affine
            // function of the child.
            if (!(std::abs(b) > std::numeric_limits<double>::min()))
                throw GaussianIdError("reverse_arc: degenerate deterministic arc");
            b_rev = 1.0 / b;
            vi_new = 0.0;
        }
        if (p > 0) {
            Eigen::VectorXd a_i = arcs.col(p).head(p);
            Eigen::VectorXd a_j_new = arcs.col(q).head(p) + b * a_i;
            arcs.col(p).head(p) = a_j_new;
            arcs.col(q).head(p) = a_i - b_rev * a_j_new;
        }
        const Index tail = size() - q - 1;
        if (tail > 0) arcs.row(p).tail(tail).swap(arcs.row(q).tail(tail));
        arcs(p, q) = b_rev;
        std::swap(mean(p), mean(q));
        vars(p) = vj_new;
        vars(q) = vi_new;
        std::swap(labels[static_cast<std::size_t>(p)], labels[static_cast<std::size_t>(q)]);
        if (sens.cols() > 0) sens.row(p).swap(sens.row(q));
    }

    void erase(Index j) {
        const Index n = size();
        const Index tail = n - j - 1;
        Eigen::MatrixXd a(n - 1, n - 1);
        a.topLeftCorner(j, j) = arcs.topLeftCorner(j, j);
        a.topRightCorner(j, tail) = arcs.topRightCorner(j, tail);
        a.bottomLeftCorner(tail, j) = arcs.bottomLeftCorner(tail, j);
        a.bottomRightCorner(tail, tail) = arcs.bottomRightCorner(tail, tail);
        arcs = std::move(a);
        auto drop = [&](Eigen::VectorXd& v) {
            Eigen::VectorXd out(n - 1);
            out.head(j) = v.head(j);
            out.tail(tail) = v.tail(tail);
            v = std::move(out);
        };
        drop(mean);
        drop(vars);
        labels.erase(labels.begin() + j);
        if (sens.cols() > 0) {
            Eigen::MatrixXd s(n - 1, sens.cols());
            s.topRows(j) = sens.topRows(j);
            s.bottomRows(tail) = sens.bottomRows(tail);
            sens = std::move(s);
        }
    }

    // Marginalize node j out of the diagram.
    void remove(Index j) {
        for (;;) {
            const Index children = child_count(j);
            if (children == 0) break;
            if (vars(j) == 0.0 || children == 1) {
                // Absorb j into its children: B_rem = B + B_{*j} B_{j*},
                // V_rem = V + B_{j*}^2 V_j.
                for (Index c = j + 1; c < size(); ++c) {
                    const double bjc = arcs(j, c);
                    if (bjc == 0.0) continue;
                    if (j > 0) arcs.col(c).head(j) += bjc * arcs.col(j).head(j);
                    vars(c) += bjc * bjc * vars(j);
                }
                break;
            }
            // Several children sharing j's noise: turn the first child into
            // a parent of j and try again.
            const Index c = first_child(j);
            for (; j + 1 < c; ++j) swap_positions(j);
            reverse_adjacent(j);
            ++j;
        }
        erase(j);
    }

    // Reverse arcs into e until e is a root; returns e's new position.
    // Relative order of the other nodes is preserved.
    Index make_root(Index e) {
        for (Index p = last_parent(e); p >= 0; p = last_parent(e)) {
            for (; e > p + 1; --e) swap_positions(e - 1);
            reverse_adjacent(p);
            e = p;
        }
        return e;
    }

    // Condition on root node e taking `value`, then drop it. `sens_col`
    // selects the sensitivity column associated with this observation.
    void absorb_root_evidence(Index e, double value, Index sens_col, const Tolerances& tol) {
        const Index n = size();
        double delta = value - mean(e);
        Eigen::VectorXd delta_sens;
        if (sens.cols() > 0) {
            delta_sens = -sens.row(e).transpose();
            delta_sens(sens_col) += 1.0;
        }
        if (vars(e) == 0.0) {
            const double scale = std::max({1.0, std::abs(value), std::abs(mean(e))});
            if (std::abs(delta) > tol.evidence * scale)
                throw InconsistentEvidence("enter_evidence: value contradicts a deterministic node");
        }
        Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
        d(e) = delta;
        Eigen::MatrixXd ds;
        if (sens.cols() > 0) {
            ds = Eigen::MatrixXd::Zero(n, sens.cols());
            ds.row(e) = delta_sens.transpose();
        }
        for (Index c = e + 1; c < n; ++c) {
            const auto col = arcs.col(c).segment(e, c - e);
            d(c) = col.dot(d.segment(e, c - e));
            if (sens.cols() > 0) ds.row(c) = col.transpose() * ds.middleRows(e, c - e);
        }
        mean += d;
        if (sens.cols() > 0) sens += ds;
        erase(e);
    }

    void permute(const std::vector<Index>& order) {
        const Index n = size();
        Eigen::MatrixXd a(n, n);
        Eigen::VectorXd m(n), v(n);
        std::vector<NodeLabel> l(static_cast<std::size_t>(n));
        Eigen::MatrixXd s(n, sens.cols());
        for (Index r = 0; r < n; ++r) {
            const Index src = order[static_cast<std::size_t>(r)];
            m(r) = mean(src);
            v(r) = vars(src);
            l[static_cast<std::size_t>(r)] = labels[static_cast<std::size_t>(src)];
            if (sens.cols() > 0) s.row(r) = sens.row(src);
            for (Index c = 0; c < n; ++c) a(r, c) = arcs(src, order[static_cast<std::size_t>(c)]);
        }
        arcs = std::move(a);
        mean = std::move(m);
        vars = std::move(v);
        labels = std::move(l);
        sens = std::move(s);
    }
};

inline void check_index(const GaussianID& g, Index j, const char* what) {
    if (j < 0 || j >= g.size()) throw std::out_of_range(std::string(what) + ": node index out of range");
}

}  // namespace detail

/// Moment form -> influence-diagram form by a forward sweep over leading
/// principal blocks. No full inverse is formed; singular PSD input yields
/// deterministic nodes (V_j = 0).
[[nodiscard]] inline GaussianID cov_to_id(const MomentGaussian& g, std::vector<NodeLabel> labels,
                                          const Tolerances& tol = {}) {
    const Eigen::MatrixXd& x = g.cov();
    const Index n = g.size();
    if (static_cast<Index>(labels.size()) != n) throw GaussianIdError("cov_to_id: label count mismatch");
    const double max_abs = n > 0 ? x.cwiseAbs().maxCoeff() : 0.0;
    if (n > 0 && (x - x.transpose()).cwiseAbs().maxCoeff() > tol.symmetry * std::max(max_abs, 1e-300))
        throw GaussianIdError("cov_to_id: covariance is not symmetric");
    const double max_diag = n > 0 ? x.diagonal().cwiseAbs().maxCoeff() : 0.0;
    const double clamp = n > 0 ? tol.clamp * std::abs(x.trace()) / static_cast<double>(n) : 0.0;

    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd v(n);
    Eigen::VectorXd c(n), w(n);
    bool checked_spectrum = false;
    for (Index j = 0; j < n; ++j) {
        // c = (I - B_lead)^T x_col: covariance of x_j with the innovations
        // of the earlier nodes.
        for (Index k = 0; k < j; ++k) c(k) = x(k, j) - b.col(k).head(k).dot(x.col(j).head(k));
        double vj = x(j, j);
        for (Index k = 0; k < j; ++k) {
            w(k) = v(k) > 0.0 ? c(k) / v(k) : 0.0;
            vj -= w(k) * c(k);
        }
        // coefficients on the earlier nodes: b = (I - B_lead) w.
        for (Index k = 0; k < j; ++k) {
            double s = w(k);
            for (Index l = k + 1; l < j; ++l) s -= b(k, l) * w(l);
            b(k, j) = s;
        }
        // A pivot can go negative by far more than the smallest eigenvalue
        // when the matrix is singular and badly scaled, so the spectrum
        // decides.
        if (vj < -tol.indefinite * std::max(max_diag, 1e-300) && std::abs(vj) > clamp) {
            if (!checked_spectrum) {
                const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(x, Eigen::EigenvaluesOnly)
                                        .eigenvalues()
                                        .minCoeff();
                if (lmin < -tol.indefinite * std::max(max_diag, 1e-300))
                    throw GaussianIdError("cov_to_id: covariance is indefinite");
                checked_spectrum = true;
            }
        }
        if (std::abs(vj) <= clamp || vj < 0.0) vj = 0.0;
        v(j) = vj;
    }
    return GaussianID(g.mean(), std::move(b), std::move(v), std::move(labels));
}

[[nodiscard]] inline GaussianID cov_to_id(const MomentGaussian& g, const Tolerances& tol = {}) {
    return cov_to_id(g, GaussianID::default_labels(g.size()), tol);
}

/// (I - B)^-1 via a unit upper-triangular solve.
[[nodiscard]] inline Eigen::MatrixXd unit_lower_factor(const GaussianID& id) {
    const Index n = id.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - id.arcs();
    return a.triangularView<Eigen::UnitUpper>().solve(Eigen::MatrixXd::Identity(n, n));
}

[[nodiscard]] inline MomentGaussian id_to_cov(const GaussianID& id) {
    const Eigen::MatrixXd w = unit_lower_factor(id);
    Eigen::MatrixXd cov = w.transpose() * id.cond_vars().asDiagonal() * w;
    cov = 0.5 * (cov + cov.transpose()).eval();
    return MomentGaussian(id.mean(), std::move(cov));
}

/// Marginalize node j; the result is exactly the marginal of the others.
[[nodiscard]] inline GaussianID remove_node(const GaussianID& id, Index j) {
    detail::check_index(id, j, "remove_node");
    detail::IdWorkspace ws(id);
    ws.remove(j);
    return std::move(ws).freeze();
}

/// Marginalize several nodes (given by position in `id`).
[[nodiscard]] inline GaussianID remove_nodes(const GaussianID& id, std::span<const Index> nodes) {
    std::vector<NodeLabel> doomed;
    for (Index j : nodes) {
        detail::check_index(id, j, "remove_nodes");
        doomed.push_back(id.labels()[static_cast<std::size_t>(j)]);
    }
    detail::IdWorkspace ws(id);
    // Last first: earlier positions stay valid.
    for (auto it = doomed.rbegin(); it != doomed.rend(); ++it) {
        auto pos = std::find(ws.labels.begin(), ws.labels.end(), *it);
        ws.remove(static_cast<Index>(pos - ws.labels.begin()));
    }
    return std::move(ws).freeze();
}

/// Reverse the arc i -> j (positions). The joint is unchanged; the returned
/// diagram may reorder nodes, so look them up by label afterwards.
[[nodiscard]] inline GaussianID reverse_arc(const GaussianID& id, Index i, Index j) {
    detail::check_index(id, i, "reverse_arc");
    detail::check_index(id, j, "reverse_arc");
    if (i >= j || id.arc(i, j) == 0.0) throw GaussianIdError("reverse_arc: arc absent");
    const Index n = id.size();
    std::vector<bool> desc(static_cast<std::size_t>(n), false);
    desc[static_cast<std::size_t>(i)] = true;
    for (Index k = i + 1; k < j; ++k)
        for (Index p = i; p < k; ++p)
            if (desc[static_cast<std::size_t>(p)] && id.arc(p, k) != 0.0) {
                desc[static_cast<std::size_t>(k)] = true;
                break;
            }
    // Another directed path i -> ... -> j would close a cycle.
    for (Index k = i + 1; k < j; ++k)
        if (desc[static_cast<std::size_t>(k)]) {
            std::vector<bool> anc(static_cast<std::size_t>(n), false);
            anc[static_cast<std::size_t>(j)] = true;
            for (Index q = j - 1; q > i; --q)
                for (Index s = q + 1; s <= j; ++s)
                    if (anc[static_cast<std::size_t>(s)] && id.arc(q, s) != 0.0) {
                        anc[static_cast<std::size_t>(q)] = true;
                        break;
                    }
            for (Index q = i + 1; q < j; ++q)
                if (desc[static_cast<std::size_t>(q)] && anc[static_cast<std::size_t>(q)])
                    throw GaussianIdError("reverse_arc: reversal would create a cycle");
            break;
        }
    std::vector<Index> order;
    order.reserve(static_cast<std::size_t>(n));
    for (Index k = 0; k < i; ++k) order.push_back(k);
    for (Index k = i + 1; k < j; ++k)
        if (!desc[static_cast<std::size_t>(k)]) order.push_back(k);
    const Index at = static_cast<Index>(order.size());
    order.push_back(i);
    order.push_back(j);
    for (Index k = i + 1; k < j; ++k)
        if (desc[static_cast<std::size_t>(k)]) order.push_back(k);
    for (Index k = j + 1; k < n; ++k) order.push_back(k);

    detail::IdWorkspace ws(id);
    ws.permute(order);
    ws.reverse_adjacent(at);
    return std::move(ws).freeze();
}

/// Condition on observed nodes and drop them. Each evidence node is turned
/// into a root by arc reversals, its value is pushed into the means of its
/// descendants, and it is deleted. The gain has one row per remaining node
/// and one column per observation.
[[nodiscard]] inline ConditionedID condition_on(const GaussianID& id, std::span<const Observation> observed,
                                                const Tolerances& tol = {}) {
    std::vector<NodeLabel> obs_labels;
    for (const auto& o : observed) {
        detail::check_index(id, o.node, "enter_evidence");
        const NodeLabel l = id.labels()[static_cast<std::size_t>(o.node)];
        if (std::find(obs_labels.begin(), obs_labels.end(), l) != obs_labels.end())
            throw GaussianIdError("enter_evidence: duplicate observed node");
        obs_labels.push_back(l);
    }
    detail::IdWorkspace ws(id, static_cast<Index>(observed.size()));
    for (std::size_t k = 0; k < observed.size(); ++k) {
        auto pos = std::find(ws.labels.begin(), ws.labels.end(), obs_labels[k]);
        Index e = ws.make_root(static_cast<Index>(pos - ws.labels.begin()));
        ws.absorb_root_evidence(e, observed[k].value, static_cast<Index>(k), tol);
    }
    Eigen::MatrixXd gain = std::move(ws.sens);
    ws.sens.resize(0, 0);
    return {std::move(ws).freeze(), std::move(gain)};
}

[[nodiscard]] inline GaussianID enter_evidence(const GaussianID& id, std::span<const Observation> observed,
                                               const Tolerances& tol = {}) {
    return condition_on(id, observed, tol).posterior;
}

/// r^T S^-1 r for S held in (B, V) form, computed as sum_j u_j^2 / v_j with
/// u = (I - B)^T r. No inversion of S.
[[nodiscard]] inline double quad_form_inverse(const GaussianID& s_form, const Eigen::VectorXd& residual,
                                              const Tolerances& tol = {}) {
    const Index m = s_form.size();
    if (residual.size() != m) throw GaussianIdError("quad_form_inverse: dimension mismatch");
    const Eigen::VectorXd u = residual - s_form.arcs().transpose() * residual;
    const double scale = std::max(1.0, residual.cwiseAbs().maxCoeff());
    double d2 = 0.0;
    for (Index j = 0; j < m; ++j) {
        const double vj = s_form.cond_vars()(j);
        if (vj > 0.0) {
            d2 += u(j) * u(j) / vj;
        } else if (std::abs(u(j)) > tol.on_support * scale) {
            throw DeterministicDirection("quad_form_inverse: residual leaves the support");
        }
    }
    return d2;
}

/// log det S = sum_j log v_j (-inf for a degenerate diagram).
[[nodiscard]] inline double log_det(const GaussianID& id) {
    return id.cond_vars().array().log().sum();
}

/// Block diagram [a; b] in which b's nodes are shifted by cross^T x_a, so
/// cov = [[P_a, P_a C], [C^T P_a, P_b + C^T P_a C]]. Rows of `cross` index
/// a, columns index b. The arcs stored from a into b are C (I - B_b).
[[nodiscard]] inline GaussianID stack(const GaussianID& a, const GaussianID& b, const Eigen::MatrixXd& cross) {
    const Index na = a.size();
    const Index nb = b.size();
    if (cross.rows() != na || cross.cols() != nb) throw GaussianIdError("stack: cross block dimension mismatch");
    Eigen::VectorXd mean(na + nb);
    mean << a.mean(), b.mean();
    Eigen::VectorXd vars(na + nb);
    vars << a.cond_vars(), b.cond_vars();
    Eigen::MatrixXd arcs = Eigen::MatrixXd::Zero(na + nb, na + nb);
    arcs.topLeftCorner(na, na) = a.arcs();
    arcs.topRightCorner(na, nb) = cross - cross * b.arcs();
    arcs.bottomRightCorner(nb, nb) = b.arcs();
    std::vector<NodeLabel> labels = a.labels();
    labels.insert(labels.end(), b.labels().begin(), b.labels().end());
    return GaussianID(std::move(mean), std::move(arcs), std::move(vars), std::move(labels));
}

/// Plain-text dump used for test fixtures:
///   n <n>
///   labels <l_0> ... <l_{n-1}>
///   mean <..>
///   vars <..>
///   arcs
///   <n rows of n values>
[[nodiscard]] inline std::string dump(const GaussianID& id) {
    std::ostringstream os;
    os << std::setprecision(17);
    const Index n = id.size();
    os << "n " << n << "\nlabels";
    for (auto l : id.labels()) os << ' ' << to_int(l);
    os << "\nmean";
    for (Index i = 0; i < n; ++i) os << ' ' << id.mean()(i);
    os << "\nvars";
    for (Index i = 0; i < n; ++i) os << ' ' << id.cond_vars()(i);
    os << "\narcs\n";
    for (Index r = 0; r < n; ++r) {
        for (Index c = 0; c < n; ++c) os << (c ? " " : "") << id.arcs()(r, c);
        os << '\n';
    }
    return os.str();
}

[[nodiscard]] inline GaussianID parse_dump(const std::string& text) {
    std::istringstream is(text);
    auto expect = [&](const char* key) {
        std::string tok;
        if (!(is >> tok) || tok != key) throw GaussianIdError(std::string("parse_dump: expected ") + key);
    };
    Index n = 0;
    expect("n");
    if (!(is >> n) || n < 0) throw GaussianIdError("parse_dump: bad node count");
    std::vector<NodeLabel> labels(static_cast<std::size_t>(n));
    Eigen::VectorXd mean(n), vars(n);
    Eigen::MatrixXd arcs(n, n);
    expect("labels");
    for (auto& l : labels) {
        std::int32_t v = 0;
        if (!(is >> v)) throw GaussianIdError("parse_dump: bad label");
        l = label(v);
    }
    expect("mean");
    for (Index i = 0; i < n; ++i)
        if (!(is >> mean(i))) throw GaussianIdError("parse_dump: bad mean");
    expect("vars");
    for (Index i = 0; i < n; ++i)
        if (!(is >> vars(i))) throw GaussianIdError("parse_dump: bad vars");
    expect("arcs");
    for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < n; ++c)
            if (!(is >> arcs(r, c))) throw GaussianIdError("parse_dump: bad arcs");
    return GaussianID(std::move(mean), std::move(arcs), std::move(vars), std::move(labels));
}

}  // namespace idjpda
