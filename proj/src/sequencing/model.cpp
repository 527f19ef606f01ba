#include "fours/sequencing/model.hpp"

#include "fours/errors.hpp"
#include "fours/numerics/normal.hpp"
#include "fours/numerics/parallel.hpp"
#include "fours/numerics/quadrature.hpp"
#include "fours/numerics/splines.hpp"

#include <Eigen/Cholesky>
#include <boost/math/distributions/students_t.hpp>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace fours::sequencing {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using numerics::kLogSqrt2Pi;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kActiveWeight = 1e-14;
constexpr double kTinyProbability = 1e-300;
constexpr double kProposalDf = 3.0;

}  // namespace

// ---------------------------------------------------------------------------
// Structure

int CauseModel::n_baseline() const {
    switch (baseline) {
        case BaselineKind::Weibull: return 2;
        case BaselineKind::PiecewiseConstant: return static_cast<int>(knots.size()) + 1;
        case BaselineKind::CubicBSpline: return static_cast<int>(knots.size()) + 4;
    }
    return 0;
}

int CauseModel::n_association(int n_random) const {
    switch (association) {
        case AssociationKind::None: return 0;
        case AssociationKind::RandomEffects: return n_random;
        case AssociationKind::CurrentValue: return 1;
    }
    return 0;
}

int CauseModel::n_params(int n_random) const { return n_baseline() + n_covariates + n_association(n_random); }

VectorXd CauseModel::basis(double t) const {
    switch (baseline) {
        case BaselineKind::Weibull: return {};
        case BaselineKind::PiecewiseConstant: {
            VectorXd r = VectorXd::Zero(n_baseline());
            r(std::upper_bound(knots.begin(), knots.end(), t) - knots.begin()) = 1.0;
            return r;
        }
        case BaselineKind::CubicBSpline: {
            numerics::SplineBasis b(numerics::SplineKind::CubicBSpline, knots, {0.0, horizon});
            return b.evaluate(std::min(t, horizon));
        }
    }
    return {};
}

void CauseModel::validate() const {
    if (n_covariates < 0) throw ValidationError("negative hazard covariate count");
    if (!std::is_sorted(knots.begin(), knots.end())) throw ValidationError("baseline knots must be sorted");
    for (double k : knots)
        if (!(k > 0.0)) throw ValidationError("baseline knots must be positive");
    if (baseline == BaselineKind::CubicBSpline) {
        if (!(horizon > 0.0)) throw ValidationError("B-spline baseline needs a positive horizon");
        if (!knots.empty() && knots.back() >= horizon)
            throw ValidationError("B-spline baseline knots must lie below the horizon");
    }
}

std::vector<std::pair<int, int>> ModelStructure::chol_entries() const {
    std::vector<std::pair<int, int>> e;
    for (int a = 0; a < n_random; ++a)
        for (int b = 0; b <= a; ++b) {
            if (a == 0 && b == 0) continue;
            if (diagonal_random && a != b) continue;
            e.emplace_back(a, b);
        }
    return e;
}

int ModelStructure::outcome_offset(std::size_t k) const {
    int off = n_latent();
    for (std::size_t i = 0; i < k; ++i) off += outcomes[i].n_params();
    return off;
}

int ModelStructure::cause_offset(std::size_t p) const {
    int off = outcome_offset(outcomes.size());
    for (std::size_t i = 0; i < p; ++i) off += causes[i].n_params(n_random);
    return off;
}

int ModelStructure::n_params() const { return cause_offset(causes.size()); }

MatrixXd ModelStructure::cholesky(const VectorXd& theta) const {
    MatrixXd L = MatrixXd::Zero(n_random, n_random);
    L(0, 0) = 1.0;
    const auto entries = chol_entries();
    for (std::size_t e = 0; e < entries.size(); ++e)
        L(entries[e].first, entries[e].second) = theta(n_fixed + static_cast<int>(e));
    return L;
}

void ModelStructure::validate() const {
    if (n_fixed < 0) throw ValidationError("negative fixed-effect count");
    if (n_random < 1) throw ValidationError("at least one random effect is required");
    if (outcomes.empty()) throw ValidationError("model has no outcomes");
    for (const auto& o : outcomes) {
        if (o.kind == OutcomeModel::Kind::Ordinal && o.max_level < 1)
            throw ValidationError("ordinal outcome '" + o.name + "' needs at least two levels");
        if (o.kind == OutcomeModel::Kind::Curvilinear && o.link_size < 1)
            throw ValidationError("curvilinear outcome '" + o.name + "' needs a link basis");
    }
    for (const auto& c : causes) c.validate();
    if (hazard_nodes < 1 || hazard_nodes_fine < 1) throw ValidationError("hazard quadrature needs nodes");
}

VectorXd thresholds_from_eta(const VectorXd& eta) {
    VectorXd d(eta.size());
    for (Eigen::Index m = 0; m < eta.size(); ++m) d(m) = m == 0 ? eta(0) : d(m - 1) + eta(m) * eta(m);
    return d;
}

VectorXd eta_from_thresholds(const VectorXd& delta) {
    VectorXd e(delta.size());
    for (Eigen::Index m = 0; m < delta.size(); ++m)
        e(m) = m == 0 ? delta(0) : std::sqrt(std::max(delta(m) - delta(m - 1), 0.0));
    return e;
}

// ---------------------------------------------------------------------------
// Survival preparation

namespace {

HazardNodes build_nodes(const CauseModel& c, const DesignRows& rows, double T, int per_segment) {
    std::vector<double> cuts{0.0};
    if (c.baseline != BaselineKind::Weibull)
        for (double k : c.knots)
            if (k > 0.0 && k < T) cuts.push_back(k);
    cuts.push_back(T);
    std::vector<double> t, w;
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
        const auto rule = numerics::gauss_legendre(per_segment, cuts[s], cuts[s + 1]);
        t.insert(t.end(), rule.nodes.begin(), rule.nodes.end());
        w.insert(w.end(), rule.weights.begin(), rule.weights.end());
    }
    HazardNodes h;
    const auto n = static_cast<Eigen::Index>(t.size());
    h.t = Eigen::Map<VectorXd>(t.data(), n);
    h.w = Eigen::Map<VectorXd>(w.data(), n);
    const auto x0 = rows.x(t[0]);
    const auto z0 = rows.z(t[0]);
    h.x.resize(n, x0.size());
    h.z.resize(n, z0.size());
    h.basis.resize(n, c.baseline == BaselineKind::Weibull ? 0 : c.n_baseline());
    for (Eigen::Index g = 0; g < n; ++g) {
        h.x.row(g) = rows.x(t[g]);
        h.z.row(g) = rows.z(t[g]);
        if (c.baseline != BaselineKind::Weibull) h.basis.row(g) = c.basis(t[g]).transpose();
    }
    return h;
}

}  // namespace

void prepare_survival(PreparedPatient& p, const ModelStructure& s, const DesignRows& rows,
                      const std::vector<VectorXd>& covariates) {
    if (!(p.event_time > 0.0) || !std::isfinite(p.event_time))
        throw ValidationError("patient '" + p.id + "' has a non-positive event time");
    if (covariates.size() != s.causes.size())
        throw ValidationError("patient '" + p.id + "' needs one covariate vector per cause");
    const double T = p.event_time;
    p.x_event = rows.x(T);
    p.z_event = rows.z(T);
    p.covariates = covariates;
    p.basis_event.assign(s.causes.size(), {});
    p.cumulative_basis.assign(s.causes.size(), {});
    p.nodes.assign(s.causes.size(), {});
    p.nodes_fine.assign(s.causes.size(), {});
    for (std::size_t c = 0; c < s.causes.size(); ++c) {
        const auto& cm = s.causes[c];
        if (covariates[c].size() != cm.n_covariates)
            throw ValidationError("patient '" + p.id + "' has the wrong number of hazard covariates");
        const bool current = cm.association == AssociationKind::CurrentValue;
        if (cm.baseline != BaselineKind::Weibull) p.basis_event[c] = cm.basis(T);
        if (current || cm.baseline != BaselineKind::Weibull) p.nodes[c] = build_nodes(cm, rows, T, s.hazard_nodes);
        if (current) p.nodes_fine[c] = build_nodes(cm, rows, T, s.hazard_nodes_fine);
        if (cm.baseline != BaselineKind::Weibull) p.cumulative_basis[c] = p.nodes[c].basis.transpose() * p.nodes[c].w;
    }
}

// ---------------------------------------------------------------------------
// Likelihood kernels

namespace {

struct OutcomeState {
    VectorXd eta;
    VectorXd delta;  // ordinal thresholds
    double s = 0.0;
};

struct CauseState {
    VectorXd xi, gamma, alpha;
    bool fine = false;
};

struct ThetaState {
    VectorXd beta;
    MatrixXd L;
    std::vector<OutcomeState> outcomes;
    std::vector<CauseState> causes;
};

ThetaState theta_state(const ModelStructure& s, const VectorXd& theta) {
    if (theta.size() != s.n_params()) throw ValidationError("parameter vector has the wrong length");
    ThetaState st;
    st.beta = theta.head(s.n_fixed);
    st.L = s.cholesky(theta);
    for (std::size_t k = 0; k < s.outcomes.size(); ++k) {
        const auto& o = s.outcomes[k];
        const int off = s.outcome_offset(k);
        OutcomeState os;
        os.eta = theta.segment(off, o.n_params() - 1);
        os.s = theta(off + o.n_params() - 1);
        if (o.kind == OutcomeModel::Kind::Ordinal) os.delta = thresholds_from_eta(os.eta);
        st.outcomes.push_back(std::move(os));
    }
    for (std::size_t c = 0; c < s.causes.size(); ++c) {
        const auto& cm = s.causes[c];
        int off = s.cause_offset(c);
        CauseState cs;
        cs.xi = theta.segment(off, cm.n_baseline());
        off += cm.n_baseline();
        cs.gamma = theta.segment(off, cm.n_covariates);
        off += cm.n_covariates;
        cs.alpha = theta.segment(off, cm.n_association(s.n_random));
        cs.fine = cm.association == AssociationKind::CurrentValue && std::abs(cs.alpha(0)) > s.fine_threshold;
        st.causes.push_back(std::move(cs));
    }
    return st;
}

// Standardized nodes of one patient, their random effects and importance
// log weights (empty for prior nodes).
struct NodeSet {
    MatrixXd U;
    MatrixXd B;  // rows b_q = L u_q
    VectorXd log_weight;
};

// `t_nodes` and `t_log_density` hold the Student-t nodes and their log
// densities; used only with a proposal.
NodeSet node_set(const MatrixXd& nodes, const MatrixXd& t_nodes, const VectorXd& t_log_density,
                 const NodeProposal* proposal, const MatrixXd& L) {
    NodeSet ns;
    // a proposal equal to the prior carries no information
    if (proposal == nullptr || (proposal->mean.isZero(0.0) && proposal->scale.isIdentity(0.0))) {
        ns.U = nodes;
    } else {
        ns.U = t_nodes * proposal->scale.transpose();
        ns.U.rowwise() += proposal->mean.transpose();
        const double log_det = proposal->scale.diagonal().array().abs().log().sum();
        const double n = static_cast<double>(nodes.cols());
        ns.log_weight = -0.5 * ns.U.rowwise().squaredNorm() - t_log_density;
        ns.log_weight.array() += log_det - n * kLogSqrt2Pi;
    }
    ns.B = ns.U * L.transpose();
    return ns;
}

// q-independent quantities of one observation: bounds or link values, and the
// map from its three primitive variables to the outcome's local parameters.
struct ObsPrep {
    int offset = 0;
    int n_local = 0;
    bool ordinal = true;
    double lower = -kInf, upper = kInf, a = 1.0;  // ordinal
    double h = 0.0, log_slope = 0.0, inv_sd = 1.0, s = 0.0;  // curvilinear
    MatrixXd J;                  // 3 x n_local
    std::array<MatrixXd, 3> T;   // second derivatives of each primitive
};

ObsPrep prepare_obs(const ModelStructure& s, const ThetaState& st, const PreparedObservation& ob, bool derivatives) {
    const auto& om = s.outcomes[ob.outcome];
    const auto& os = st.outcomes[ob.outcome];
    ObsPrep o;
    o.offset = s.outcome_offset(ob.outcome);
    o.n_local = om.n_params();
    o.s = os.s;
    if (om.kind == OutcomeModel::Kind::Ordinal) {
        const int M = om.max_level, m = ob.level;
        o.a = std::exp(-os.s);
        if (m >= 1) o.lower = os.delta(m - 1);
        if (m < M) o.upper = os.delta(m);
        if (!derivatives) return o;
        o.J = MatrixXd::Zero(3, o.n_local);
        for (auto& t : o.T) t = MatrixXd::Zero(o.n_local, o.n_local);
        auto threshold_row = [&](int row, int k) {  // d_k, k = 1..M
            o.J(row, 0) = 1.0;
            for (int j = 1; j < k; ++j) {
                o.J(row, j) = 2.0 * os.eta(j);
                o.T[row](j, j) = 2.0;
            }
        };
        if (m >= 1) threshold_row(0, m);
        if (m < M) threshold_row(1, m + 1);
        o.J(2, M) = 1.0;
        return o;
    }
    o.ordinal = false;
    const int n = om.link_size;
    const VectorXd e2 = os.eta.tail(n).array().square();
    o.h = os.eta(0) + e2.dot(ob.link_value);
    const double slope = e2.dot(ob.link_slope);
    o.log_slope = std::log(slope);
    o.inv_sd = std::exp(-os.s);
    if (!derivatives) return o;
    o.J = MatrixXd::Zero(3, o.n_local);
    for (auto& t : o.T) t = MatrixXd::Zero(o.n_local, o.n_local);
    o.J(0, 0) = 1.0;
    o.J(1, n + 1) = 1.0;
    VectorXd dslope(n);
    for (int l = 0; l < n; ++l) {
        const double el = os.eta(l + 1);
        o.J(0, l + 1) = 2.0 * el * ob.link_value(l);
        o.T[0](l + 1, l + 1) = 2.0 * ob.link_value(l);
        dslope(l) = 2.0 * el * ob.link_slope(l);
        o.J(2, l + 1) = dslope(l) / slope;
    }
    for (int l = 0; l < n; ++l)
        for (int k = 0; k < n; ++k)
            o.T[2](l + 1, k + 1) = (l == k ? 2.0 * ob.link_slope(l) / slope : 0.0) - dslope(l) * dslope(k) / (slope * slope);
    return o;
}

double obs_log_density(const ObsPrep& o, double delta) {
    if (o.ordinal) {
        const double p = numerics::normal_interval_probability(o.a * (o.lower - delta), o.a * (o.upper - delta));
        return std::log(std::max(p, kTinyProbability));
    }
    const double r = (o.h - delta) * o.inv_sd;
    return -o.s - kLogSqrt2Pi - 0.5 * r * r + o.log_slope;
}

// Gradient and Hessian over (delta, v1, v2, v3): ordinal (delta, lower,
// upper, s); curvilinear (delta, H, s, log H').
void obs_primitive(const ObsPrep& o, double delta, Eigen::Vector4d& g, Eigen::Matrix4d& h) {
    g.setZero();
    h.setZero();
    if (o.ordinal) {
        const double a = o.a;
        double p = numerics::normal_interval_probability(a * (o.lower - delta), a * (o.upper - delta));
        p = std::max(p, kTinyProbability);
        Eigen::Vector4d dp = Eigen::Vector4d::Zero();
        Eigen::Matrix4d hp = Eigen::Matrix4d::Zero();
        if (std::isfinite(o.upper)) {
            const double z = a * (o.upper - delta), f = numerics::normal_pdf(z);
            const Eigen::Vector4d dz(-a, 0.0, a, -z);
            Eigen::Matrix4d hz = Eigen::Matrix4d::Zero();
            hz(0, 3) = hz(3, 0) = a;
            hz(2, 3) = hz(3, 2) = -a;
            hz(3, 3) = z;
            dp += f * dz;
            hp += -z * f * dz * dz.transpose() + f * hz;
        }
        if (std::isfinite(o.lower)) {
            const double z = a * (o.lower - delta), f = numerics::normal_pdf(z);
            const Eigen::Vector4d dz(-a, a, 0.0, -z);
            Eigen::Matrix4d hz = Eigen::Matrix4d::Zero();
            hz(0, 3) = hz(3, 0) = a;
            hz(1, 3) = hz(3, 1) = -a;
            hz(3, 3) = z;
            dp -= f * dz;
            hp -= -z * f * dz * dz.transpose() + f * hz;
        }
        g = dp / p;
        h = hp / p - g * g.transpose();
        return;
    }
    const double e = o.inv_sd, e2 = e * e;
    const double r = (o.h - delta) * e;
    g << r * e, -r * e, -1.0 + r * r, 1.0;
    h(0, 0) = -e2;
    h(0, 1) = h(1, 0) = e2;
    h(1, 1) = -e2;
    h(0, 2) = h(2, 0) = -2.0 * r * e;
    h(1, 2) = h(2, 1) = 2.0 * r * e;
    h(2, 2) = -2.0 * r * r;
}

// Log baseline hazard at t and log cumulative baseline hazard at T, with
// derivatives in xi.
struct Scalar2 {
    double value = 0.0;
    VectorXd grad;
    MatrixXd hess;
};

Scalar2 weibull_log_hazard(const VectorXd& xi, double t, bool derivatives) {
    const double x1 = xi(0), x2 = xi(1);
    const double lz1 = std::log(x1 * x1), lt = std::log(t);
    Scalar2 r;
    r.value = std::log(x2 * x2) + x2 * x2 * lz1 + (x2 * x2 - 1.0) * lt;
    if (!derivatives) return r;
    r.grad.resize(2);
    r.grad << 2.0 * x2 * x2 / x1, 2.0 / x2 + 2.0 * x2 * (lz1 + lt);
    r.hess.resize(2, 2);
    r.hess << -2.0 * x2 * x2 / (x1 * x1), 4.0 * x2 / x1, 4.0 * x2 / x1, -2.0 / (x2 * x2) + 2.0 * (lz1 + lt);
    return r;
}

Scalar2 weibull_log_cumulative(const VectorXd& xi, double t, bool derivatives) {
    const double x1 = xi(0), x2 = xi(1);
    const double lz1 = std::log(x1 * x1), lt = std::log(t);
    Scalar2 r;
    r.value = x2 * x2 * (lz1 + lt);
    if (!derivatives) return r;
    r.grad.resize(2);
    r.grad << 2.0 * x2 * x2 / x1, 2.0 * x2 * (lz1 + lt);
    r.hess.resize(2, 2);
    r.hess << -2.0 * x2 * x2 / (x1 * x1), 4.0 * x2 / x1, 4.0 * x2 / x1, 2.0 * (lz1 + lt);
    return r;
}

// log sum_l xi_l^2 r_l
Scalar2 log_weighted_sum(const VectorXd& xi, const VectorXd& r, bool derivatives) {
    const double total = xi.array().square().matrix().dot(r);
    Scalar2 out;
    out.value = std::log(total);
    if (!derivatives) return out;
    out.grad = (2.0 * xi.array() * r.array() / total).matrix();
    out.hess = MatrixXd((2.0 * r.array() / total).matrix().asDiagonal()) - out.grad * out.grad.transpose();
    return out;
}

Scalar2 log_baseline(const CauseModel& cm, const VectorXd& xi, double t, const VectorXd& basis, bool derivatives) {
    return cm.baseline == BaselineKind::Weibull ? weibull_log_hazard(xi, t, derivatives)
                                                : log_weighted_sum(xi, basis, derivatives);
}

// q-independent pieces of one cause for one patient.
struct SurvivalPrep {
    bool event = false;
    double wg = 0.0;
    Scalar2 at_event;
    Scalar2 cumulative;                // non current-value forms
    const HazardNodes* nodes = nullptr;
    VectorXd c;                        // log baseline + log weight + wg per node
    MatrixXd node_grad;                // nodes x n_baseline
    std::vector<MatrixXd> node_hess;
};

SurvivalPrep prepare_survival_terms(const ModelStructure& s, const ThetaState& st, const PreparedPatient& p,
                                    std::size_t c, bool derivatives) {
    const auto& cm = s.causes[c];
    const auto& cs = st.causes[c];
    SurvivalPrep sp;
    sp.event = p.cause == static_cast<int>(c) + 1;
    sp.wg = cm.n_covariates > 0 ? p.covariates[c].dot(cs.gamma) : 0.0;
    if (sp.event)
        sp.at_event = log_baseline(cm, cs.xi, p.event_time, cm.baseline == BaselineKind::Weibull ? VectorXd() : p.basis_event[c],
                                   derivatives);
    if (cm.association != AssociationKind::CurrentValue) {
        sp.cumulative = cm.baseline == BaselineKind::Weibull
                            ? weibull_log_cumulative(cs.xi, p.event_time, derivatives)
                            : log_weighted_sum(cs.xi, p.cumulative_basis[c], derivatives);
        return sp;
    }
    sp.nodes = cs.fine ? &p.nodes_fine[c] : &p.nodes[c];
    const auto& hn = *sp.nodes;
    const auto n = hn.t.size();
    sp.c.resize(n);
    if (derivatives) {
        sp.node_grad.resize(n, cm.n_baseline());
        sp.node_hess.resize(n);
    }
    for (Eigen::Index g = 0; g < n; ++g) {
        const auto b = log_baseline(cm, cs.xi, hn.t(g),
                                    cm.baseline == BaselineKind::Weibull ? VectorXd() : VectorXd(hn.basis.row(g).transpose()),
                                    derivatives);
        sp.c(g) = b.value + std::log(hn.w(g)) + sp.wg;
        if (derivatives) {
            sp.node_grad.row(g) = b.grad.transpose();
            sp.node_hess[g] = b.hess;
        }
    }
    return sp;
}

// Survival log-likelihood of one cause at every QMC node.
VectorXd survival_values(const ModelStructure& s, const ThetaState& st, const NodeSet& ns, const PreparedPatient& p,
                         std::size_t c, const SurvivalPrep& sp) {
    const auto& cm = s.causes[c];
    const auto& cs = st.causes[c];
    const auto Q = ns.B.rows();
    if (cm.association == AssociationKind::CurrentValue) {
        const double alpha = cs.alpha(0);
        const auto& hn = *sp.nodes;
        MatrixXd dg = hn.z * ns.B.transpose();
        dg.colwise() += hn.x * st.beta;
        const VectorXd lam = ((alpha * dg).colwise() + sp.c).array().exp().colwise().sum().transpose();
        VectorXd v = -lam;
        if (sp.event) {
            const VectorXd dT = (ns.B * p.z_event.transpose()).array() + p.x_event.dot(st.beta);
            v.array() += sp.at_event.value + sp.wg + alpha * dT.array();
        }
        return v;
    }
    VectorXd A = VectorXd::Zero(Q);
    if (cm.association == AssociationKind::RandomEffects) A = ns.B * cs.alpha;
    VectorXd v = -(A.array() + sp.cumulative.value + sp.wg).exp().matrix();
    if (sp.event) v.array() += sp.at_event.value + sp.wg + A.array();
    return v;
}

struct PatientValues {
    MatrixXd delta;  // visits x Q
    VectorXd ll;     // per node log-likelihood
    std::vector<ObsPrep> obs;
    std::vector<SurvivalPrep> surv;
};

PatientValues patient_values(const ModelStructure& s, const ThetaState& st, const NodeSet& ns, const PreparedPatient& p,
                             bool derivatives) {
    PatientValues pv;
    const auto Q = ns.B.rows();
    pv.delta = p.z * ns.B.transpose();
    pv.delta.colwise() += p.x * st.beta;
    pv.ll = ns.log_weight.size() == Q ? ns.log_weight : VectorXd::Zero(Q);
    pv.obs.reserve(p.obs.size());
    for (const auto& ob : p.obs) {
        pv.obs.push_back(prepare_obs(s, st, ob, derivatives));
        const auto& o = pv.obs.back();
        for (Eigen::Index q = 0; q < Q; ++q) pv.ll(q) += obs_log_density(o, pv.delta(ob.visit, q));
    }
    for (std::size_t c = 0; c < s.causes.size(); ++c) {
        pv.surv.push_back(prepare_survival_terms(s, st, p, c, derivatives));
        pv.ll += survival_values(s, st, ns, p, c, pv.surv.back());
    }
    return pv;
}

double log_mean_exp(const VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum()) - std::log(static_cast<double>(v.size()));
}

// Rows [x, z_a u_b over the Cholesky entries] for every row of (x, z).
MatrixXd latent_design(const ModelStructure& s, const MatrixXd& x, const MatrixXd& z,
                       const std::vector<std::pair<int, int>>& entries, const Eigen::Ref<const Eigen::RowVectorXd>& u) {
    MatrixXd D(x.rows(), s.n_latent());
    D.leftCols(s.n_fixed) = x;
    for (std::size_t e = 0; e < entries.size(); ++e)
        D.col(s.n_fixed + static_cast<Eigen::Index>(e)) = z.col(entries[e].first) * u(entries[e].second);
    return D;
}

// Gradient and Hessian of one cause's survival term at node q over
// V = (latent, xi, gamma, alpha).
void survival_node_derivatives(const ModelStructure& s, const ThetaState& st, const NodeSet& ns,
                               const PreparedPatient& p, std::size_t c, const SurvivalPrep& sp, Eigen::Index q,
                               const std::vector<std::pair<int, int>>& entries, const Eigen::RowVectorXd& u,
                               VectorXd& grad, MatrixXd& hess) {
    const auto& cm = s.causes[c];
    const auto& cs = st.causes[c];
    const int n0 = s.n_latent(), nb = cm.n_baseline(), nw = cm.n_covariates;
    const int na = cm.n_association(s.n_random);
    const int ib = n0, iw = n0 + nb, ia = n0 + nb + nw, nV = ia + na;
    grad = VectorXd::Zero(nV);
    hess = MatrixXd::Zero(nV, nV);
    const double d = sp.event ? 1.0 : 0.0;

    if (cm.association == AssociationKind::CurrentValue) {
        const double alpha = cs.alpha(0);
        const auto& hn = *sp.nodes;
        const MatrixXd Dg = latent_design(s, hn.x, hn.z, entries, u);
        const VectorXd dg = hn.x * st.beta + hn.z * ns.B.row(q).transpose();
        const VectorXd E = (sp.c.array() + alpha * dg.array()).exp();
        MatrixXd M(hn.t.size(), nV);
        M.leftCols(n0) = alpha * Dg;
        M.middleCols(ib, nb) = sp.node_grad;
        if (nw > 0) M.middleCols(iw, nw).rowwise() = p.covariates[c].transpose();
        M.col(ia) = dg;
        grad -= M.transpose() * E;
        hess -= M.transpose() * E.asDiagonal() * M;
        for (Eigen::Index g = 0; g < E.size(); ++g) hess.block(ib, ib, nb, nb) -= E(g) * sp.node_hess[g];
        const VectorXd cross = Dg.transpose() * E;
        hess.col(ia).head(n0) -= cross;
        hess.row(ia).head(n0) -= cross.transpose();
        if (sp.event) {
            const Eigen::RowVectorXd DT = latent_design(s, p.x_event, p.z_event, entries, u);
            const double dT = p.x_event.dot(st.beta) + p.z_event.dot(ns.B.row(q));
            grad.head(n0) += alpha * DT.transpose();
            grad.segment(ib, nb) += sp.at_event.grad;
            if (nw > 0) grad.segment(iw, nw) += p.covariates[c];
            grad(ia) += dT;
            hess.block(ib, ib, nb, nb) += sp.at_event.hess;
            hess.col(ia).head(n0) += DT.transpose();
            hess.row(ia).head(n0) += DT;
        }
        return;
    }

    // Shared-random-effect and no-association forms.
    VectorXd dA = VectorXd::Zero(nV);
    MatrixXd hA = MatrixXd::Zero(nV, nV);
    double A = 0.0;
    if (cm.association == AssociationKind::RandomEffects) {
        const Eigen::RowVectorXd b = ns.B.row(q);
        A = b.dot(cs.alpha);
        for (std::size_t e = 0; e < entries.size(); ++e) {
            const auto [ra, cb] = entries[e];
            const int ie = s.n_fixed + static_cast<int>(e);
            dA(ie) = cs.alpha(ra) * u(cb);
            hA(ia + ra, ie) = hA(ie, ia + ra) = u(cb);
        }
        dA.segment(ia, na) = b.transpose();
    }
    VectorXd de = dA;
    if (nw > 0) de.segment(iw, nw) = p.covariates[c];
    VectorXd deL = de;
    deL.segment(ib, nb) = sp.cumulative.grad;
    const double E = std::exp(sp.cumulative.value + sp.wg + A);
    grad -= E * deL;
    hess -= E * (deL * deL.transpose() + hA);
    hess.block(ib, ib, nb, nb) -= E * sp.cumulative.hess;
    if (sp.event) {
        VectorXd deT = de;
        deT.segment(ib, nb) = sp.at_event.grad;
        grad += d * deT;
        hess += d * hA;
        hess.block(ib, ib, nb, nb) += sp.at_event.hess;
    }
}

struct PatientDerivatives {
    double value = 0.0;
    VectorXd grad;
    MatrixXd hess;
};

PatientDerivatives patient_derivatives(const ModelStructure& s, const ThetaState& st, const NodeSet& ns,
                                       const PreparedPatient& p) {
    const auto pv = patient_values(s, st, ns, p, true);
    PatientDerivatives out;
    out.value = log_mean_exp(pv.ll);
    const int P = s.n_params(), n0 = s.n_latent();
    out.grad = VectorXd::Zero(P);
    out.hess = MatrixXd::Zero(P, P);
    if (!std::isfinite(out.value)) return out;

    const VectorXd pi = (pv.ll.array() - pv.ll.maxCoeff()).exp() / (pv.ll.array() - pv.ll.maxCoeff()).exp().sum();
    std::vector<Eigen::Index> active;
    for (Eigen::Index q = 0; q < pi.size(); ++q)
        if (pi(q) > kActiveWeight) active.push_back(q);

    const auto entries = s.chol_entries();
    const auto n_obs = pv.obs.size();
    std::vector<Eigen::Matrix3d> A(n_obs, Eigen::Matrix3d::Zero());
    std::vector<MatrixXd> C(n_obs, MatrixXd::Zero(3, n0));
    std::vector<Eigen::Vector3d> gv_bar(n_obs, Eigen::Vector3d::Zero());

    // Per-cause scatter map from V to the full parameter vector.
    std::vector<std::vector<int>> index(s.causes.size());
    for (std::size_t c = 0; c < s.causes.size(); ++c) {
        const int off = s.cause_offset(c);
        for (int v = 0; v < n0; ++v) index[c].push_back(v);
        for (int v = 0; v < s.causes[c].n_params(s.n_random); ++v) index[c].push_back(off + v);
    }

    MatrixXd G(P, static_cast<Eigen::Index>(active.size()));
    VectorXd g_bar = VectorXd::Zero(P);
    const auto n_visits = p.x.rows();
    Eigen::Vector4d gv;
    Eigen::Matrix4d hv;
    VectorXd sg;
    MatrixXd sh;
    for (std::size_t k = 0; k < active.size(); ++k) {
        const auto q = active[k];
        const double w = pi(q);
        const Eigen::RowVectorXd u = ns.U.row(q);
        const MatrixXd D = latent_design(s, p.x, p.z, entries, u);
        VectorXd gq = VectorXd::Zero(P);
        VectorXd cv = VectorXd::Zero(n_visits), wv = VectorXd::Zero(n_visits);
        for (std::size_t o = 0; o < n_obs; ++o) {
            const auto& ob = p.obs[o];
            const auto& op = pv.obs[o];
            obs_primitive(op, pv.delta(ob.visit, q), gv, hv);
            cv(ob.visit) += gv(0);
            wv(ob.visit) += hv(0, 0);
            A[o] += w * hv.bottomRightCorner<3, 3>();
            C[o] += w * hv.col(0).tail<3>() * D.row(ob.visit);
            gv_bar[o] += w * gv.tail<3>();
            gq.segment(op.offset, op.n_local) += op.J.transpose() * gv.tail<3>();
        }
        gq.head(n0) += D.transpose() * cv;
        out.hess.topLeftCorner(n0, n0) += w * D.transpose() * wv.asDiagonal() * D;
        for (std::size_t c = 0; c < s.causes.size(); ++c) {
            survival_node_derivatives(s, st, ns, p, c, pv.surv[c], q, entries, u, sg, sh);
            const auto& idx = index[c];
            for (std::size_t i = 0; i < idx.size(); ++i) {
                gq(idx[i]) += sg(i);
                for (std::size_t j = 0; j < idx.size(); ++j) out.hess(idx[i], idx[j]) += w * sh(i, j);
            }
        }
        G.col(k) = std::sqrt(w) * gq;
        g_bar += w * gq;
    }
    out.hess += G * G.transpose() - g_bar * g_bar.transpose();
    for (std::size_t o = 0; o < n_obs; ++o) {
        const auto& op = pv.obs[o];
        auto block = out.hess.block(op.offset, op.offset, op.n_local, op.n_local);
        block += op.J.transpose() * A[o] * op.J;
        for (int i = 0; i < 3; ++i) block += gv_bar[o](i) * op.T[i];
        const MatrixXd cross = op.J.transpose() * C[o];
        out.hess.block(op.offset, 0, op.n_local, n0) += cross;
        out.hess.block(0, op.offset, n0, op.n_local) += cross.transpose();
    }
    out.grad = g_bar;
    return out;
}

// Log joint density of one patient's data and standardized random effects u,
// up to a constant, with its gradient and Hessian in u.
double log_posterior(const ModelStructure& s, const ThetaState& st, const PreparedPatient& p,
                     const std::vector<ObsPrep>& obs, const std::vector<SurvivalPrep>& surv, const VectorXd& u,
                     VectorXd* grad, MatrixXd* hess) {
    const VectorXd b = st.L * u;
    double f = -0.5 * u.squaredNorm();
    const bool d = grad != nullptr;
    if (d) {
        *grad = -u;
        *hess = -MatrixXd::Identity(u.size(), u.size());
    }
    const VectorXd delta = p.x * st.beta + p.z * b;
    VectorXd cv = VectorXd::Zero(delta.size()), wv = VectorXd::Zero(delta.size());
    Eigen::Vector4d gv;
    Eigen::Matrix4d hv;
    for (std::size_t o = 0; o < obs.size(); ++o) {
        const int j = p.obs[o].visit;
        f += obs_log_density(obs[o], delta(j));
        if (!d) continue;
        obs_primitive(obs[o], delta(j), gv, hv);
        cv(j) += gv(0);
        wv(j) += hv(0, 0);
    }
    if (d) {
        const MatrixXd zl = p.z * st.L;
        *grad += zl.transpose() * cv;
        *hess += zl.transpose() * wv.asDiagonal() * zl;
    }
    for (std::size_t c = 0; c < s.causes.size(); ++c) {
        const auto& cm = s.causes[c];
        const auto& cs = st.causes[c];
        const auto& sp = surv[c];
        if (cm.association == AssociationKind::CurrentValue) {
            const double alpha = cs.alpha(0);
            const auto& hn = *sp.nodes;
            const VectorXd dg = hn.x * st.beta + hn.z * b;
            const VectorXd E = (sp.c.array() + alpha * dg.array()).exp();
            f -= E.sum();
            if (sp.event) f += alpha * (p.x_event.dot(st.beta) + p.z_event.dot(b));
            if (!d) continue;
            const MatrixXd zl = hn.z * st.L;
            *grad -= alpha * zl.transpose() * E;
            *hess -= alpha * alpha * zl.transpose() * E.asDiagonal() * zl;
            if (sp.event) *grad += alpha * (p.z_event * st.L).transpose();
        } else if (cm.association == AssociationKind::RandomEffects) {
            const VectorXd a = st.L.transpose() * cs.alpha;
            const double A = a.dot(u);
            const double E = std::exp(sp.cumulative.value + sp.wg + A);
            f -= E;
            if (sp.event) f += A;
            if (!d) continue;
            *grad -= E * a;
            *hess -= E * a * a.transpose();
            if (sp.event) *grad += a;
        }
    }
    return f;
}

NodeProposal laplace_proposal(const ModelStructure& s, const ThetaState& st, const PreparedPatient& p) {
    std::vector<ObsPrep> obs;
    obs.reserve(p.obs.size());
    for (const auto& ob : p.obs) obs.push_back(prepare_obs(s, st, ob, false));
    std::vector<SurvivalPrep> surv;
    for (std::size_t c = 0; c < s.causes.size(); ++c) surv.push_back(prepare_survival_terms(s, st, p, c, false));

    const auto n = st.L.rows();
    VectorXd u = VectorXd::Zero(n), g;
    MatrixXd h;
    double f = log_posterior(s, st, p, obs, surv, u, &g, &h);
    for (int iter = 0; iter < 100 && std::isfinite(f); ++iter) {
        const Eigen::LLT<MatrixXd> llt(-h);
        if (llt.info() != Eigen::Success) break;
        const VectorXd step = llt.solve(g);
        double t = 1.0, f_new = -kInf;
        VectorXd u_new;
        for (; t > 1e-10; t *= 0.5) {
            u_new = u + t * step;
            f_new = log_posterior(s, st, p, obs, surv, u_new, nullptr, nullptr);
            if (f_new >= f) break;
        }
        if (!(f_new >= f)) break;
        const bool done = (t * step).lpNorm<Eigen::Infinity>() < 1e-10;
        u = u_new;
        f = log_posterior(s, st, p, obs, surv, u, &g, &h);
        if (done) break;
    }
    NodeProposal out;
    out.mean = u;
    const Eigen::LLT<MatrixXd> llt(-h);
    if (!std::isfinite(f) || llt.info() != Eigen::Success) {
        out.mean = VectorXd::Zero(n);
        out.scale = MatrixXd::Identity(n, n);
        return out;
    }
    // -h = R R^T, so R^{-T} is a square root of the inverse curvature.
    const MatrixXd R = llt.matrixL();
    out.scale = R.transpose().triangularView<Eigen::Upper>().solve(MatrixXd::Identity(n, n));
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// JointModel

JointModel::JointModel(ModelStructure structure, std::vector<PreparedPatient> patients, MatrixXd nodes, int threads)
    : structure_(std::move(structure)), patients_(std::move(patients)), nodes_(std::move(nodes)), threads_(threads) {
    structure_.validate();
    if (patients_.empty()) throw EmptySampleError("joint model needs at least one patient");
    if (nodes_.rows() < 1 || nodes_.cols() != structure_.n_random)
        throw ValidationError("integration nodes must have one column per random effect");
    const boost::math::students_t t(kProposalDf);
    t_nodes_.resize(nodes_.rows(), nodes_.cols());
    t_log_density_ = VectorXd::Zero(nodes_.rows());
    for (Eigen::Index q = 0; q < nodes_.rows(); ++q)
        for (Eigen::Index k = 0; k < nodes_.cols(); ++k) {
            const double v = nodes_(q, k);
            const double x = boost::math::quantile(t, numerics::normal_cdf(-std::abs(v)));
            t_nodes_(q, k) = v > 0.0 ? -x : x;
            t_log_density_(q) += std::log(boost::math::pdf(t, x));
        }
    // Normalize so the nodes integrate a standard normal in proposal space
    // exactly; the correction is common to all patients and all theta.
    const VectorXd log_ratio = -0.5 * t_nodes_.rowwise().squaredNorm() - t_log_density_ -
                               VectorXd::Constant(nodes_.rows(), nodes_.cols() * kLogSqrt2Pi);
    const double top = log_ratio.maxCoeff();
    t_log_density_.array() += top + std::log((log_ratio.array() - top).exp().mean());
    for (const auto& p : patients_) {
        if (p.x.cols() != structure_.n_fixed || p.z.cols() != structure_.n_random || p.x.rows() != p.z.rows())
            throw ValidationError("patient '" + p.id + "' has design rows of the wrong shape");
        if (p.nodes.size() != structure_.causes.size())
            throw ValidationError("patient '" + p.id + "' has not been prepared for survival");
        if (p.cause < 0 || p.cause > static_cast<int>(structure_.causes.size()))
            throw ValidationError("patient '" + p.id + "' has an unknown event cause");
        for (const auto& ob : p.obs) {
            if (ob.visit < 0 || ob.visit >= p.x.rows() || ob.outcome < 0 ||
                ob.outcome >= static_cast<int>(structure_.outcomes.size()))
                throw ValidationError("patient '" + p.id + "' has an observation outside the design");
            const auto& om = structure_.outcomes[ob.outcome];
            if (om.kind == OutcomeModel::Kind::Ordinal && (ob.level < 0 || ob.level > om.max_level))
                throw ValidationError("patient '" + p.id + "' has a level outside '" + om.name + "'");
            if (om.kind == OutcomeModel::Kind::Curvilinear &&
                (ob.link_value.size() != om.link_size || ob.link_slope.size() != om.link_size))
                throw ValidationError("patient '" + p.id + "' has a link basis of the wrong size");
        }
    }
}

VectorXd JointModel::patient_log_likelihoods(const VectorXd& theta) const {
    const auto st = theta_state(structure_, theta);
    VectorXd out(static_cast<Eigen::Index>(patients_.size()));
    numerics::parallel_for(patients_.size(), threads_, [&](std::size_t i) {
        const auto ns = node_set(nodes_, t_nodes_, t_log_density_, adaptive() ? &proposals_[i] : nullptr, st.L);
        out(static_cast<Eigen::Index>(i)) = log_mean_exp(patient_values(structure_, st, ns, patients_[i], false).ll);
    });
    return out;
}

double JointModel::log_likelihood(const VectorXd& theta) const {
    const VectorXd ll = patient_log_likelihoods(theta);
    double total = 0.0;
    for (Eigen::Index i = 0; i < ll.size(); ++i) {
        if (!std::isfinite(ll(i)) || std::isnan(ll(i))) return std::isnan(ll(i)) ? ll(i) : -kInf;
        total += ll(i);
    }
    return total;
}

numerics::ObjectiveDerivatives JointModel::derivatives(const VectorXd& theta) const {
    const auto st = theta_state(structure_, theta);
    std::vector<PatientDerivatives> parts(patients_.size());
    numerics::parallel_for(patients_.size(), threads_, [&](std::size_t i) {
        const auto ns = node_set(nodes_, t_nodes_, t_log_density_, adaptive() ? &proposals_[i] : nullptr, st.L);
        parts[i] = patient_derivatives(structure_, st, ns, patients_[i]);
    });
    numerics::ObjectiveDerivatives d;
    const int P = n_params();
    d.gradient = VectorXd::Zero(P);
    d.hessian = MatrixXd::Zero(P, P);
    for (const auto& part : parts) {
        d.value += part.value;
        d.gradient += part.grad;
        d.hessian += part.hess;
    }
    if (!std::isfinite(d.value)) d.value = std::isnan(d.value) ? d.value : -kInf;
    return d;
}

numerics::SmoothObjective JointModel::objective() const {
    return {[this](const VectorXd& t) { return log_likelihood(t); },
            [this](const VectorXd& t) { return derivatives(t); }};
}

numerics::SmoothObjective JointModel::adaptive_objective() {
    return {[this](const VectorXd& t) { return log_likelihood(t); },
            [this](const VectorXd& t) {
                set_proposals(laplace_proposals(t));
                return derivatives(t);
            }};
}

std::vector<NodeProposal> JointModel::laplace_proposals(const VectorXd& theta) const {
    const auto st = theta_state(structure_, theta);
    std::vector<NodeProposal> out(patients_.size());
    numerics::parallel_for(patients_.size(), threads_,
                           [&](std::size_t i) { out[i] = laplace_proposal(structure_, st, patients_[i]); });
    return out;
}

void JointModel::set_proposals(std::vector<NodeProposal> proposals) {
    if (!proposals.empty() && proposals.size() != patients_.size())
        throw ValidationError("one node proposal is needed per patient");
    const auto n = structure_.n_random;
    for (const auto& p : proposals)
        if (p.mean.size() != n || p.scale.rows() != n || p.scale.cols() != n)
            throw ValidationError("node proposal has the wrong dimension");
    proposals_ = std::move(proposals);
}

}  // namespace fours::sequencing
