#include "fours/structuring/structuring.hpp"

#include "fours/core/csv_io.hpp"
#include "fours/core/json_io.hpp"
#include "fours/errors.hpp"
#include "fours/numerics/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fours::structuring {

void StructuringOptions::validate() const {
    if (replicates < 1) throw ValidationError("replicates must be at least 1");
    if (!(consistency > 0.5 && consistency <= 1.0)) throw ValidationError("consistency must lie in (0.5, 1]");
    if (!(residual_threshold > 0.0)) throw ValidationError("residual threshold must be positive");
    if (!(efa.loading_threshold > 0.0 && efa.loading_threshold < 1.0))
        throw ValidationError("loading threshold must lie in (0, 1)");
    if (!(monotonicity_tolerance >= 0.0)) throw ValidationError("monotonicity tolerance must be nonnegative");
    if (threads < 1) throw ValidationError("threads must be at least 1");
}

ReplicateResult analyze_replicate(const ReplicateSample& sample, const core::ScaleDefinition& scale,
                                  const StructuringOptions& options) {
    ReplicateResult out;
    out.index = sample.index;
    const auto pm = polychoric_matrix(sample, scale);
    out.items = pm.items;
    out.excluded = pm.excluded;
    out.warnings = pm.warnings;
    if (pm.items.size() < 2) {
        out.usable = false;
        out.warnings.push_back("fewer than two informative items");
        return out;
    }
    out.efa = efa(pm.matrix, options.efa);
    out.warnings.insert(out.warnings.end(), out.efa.warnings.begin(), out.efa.warnings.end());

    std::vector<Eigen::Index> rows;
    std::vector<int> factor_of;
    std::vector<int> remap(static_cast<std::size_t>(out.efa.n_factors), -1);
    int used = 0;
    for (std::size_t i = 0; i < pm.items.size(); ++i) {
        const int f = out.efa.assignment[i];
        if (f < 0) continue;
        if (remap[static_cast<std::size_t>(f)] < 0) remap[static_cast<std::size_t>(f)] = used++;
        rows.push_back(static_cast<Eigen::Index>(i));
        factor_of.push_back(remap[static_cast<std::size_t>(f)]);
    }
    if (rows.size() < 2) return out;

    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < rows.size(); ++b)
            sub(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = pm.matrix(rows[a], rows[b]);
    out.cfa = cfa_fit(sub, factor_of, static_cast<std::size_t>(sample.responses.rows()), options.cfa);
    if (!out.cfa->converged) {
        out.usable = false;
        out.warnings.push_back("CFA did not converge; replicate excluded from aggregation");
    }
    for (const auto& [a, b] : flag_residual_pairs(out.cfa->residual, options.residual_threshold))
        out.flagged_pairs.emplace_back(pm.items[static_cast<std::size_t>(rows[a])],
                                       pm.items[static_cast<std::size_t>(rows[b])]);
    return out;
}

namespace {

// Scale indices of the items assigned to each EFA factor of a replicate.
std::vector<std::vector<std::size_t>> factor_sets(const ReplicateResult& r) {
    std::vector<std::vector<std::size_t>> sets(static_cast<std::size_t>(r.efa.n_factors));
    for (std::size_t i = 0; i < r.items.size(); ++i)
        if (r.efa.assignment[i] >= 0) sets[static_cast<std::size_t>(r.efa.assignment[i])].push_back(r.items[i]);
    return sets;
}

}  // namespace

StructuringReport aggregate_structure(const std::vector<ReplicateResult>& replicates,
                                      const core::ScaleDefinition& scale, double consistency) {
    if (replicates.empty()) throw ValidationError("aggregate_structure needs at least one replicate");
    const auto k = scale.items.size();
    StructuringReport rep;
    rep.replicates = replicates;

    std::vector<std::vector<int>> counts(k);
    std::vector<std::vector<double>> loading_sum(k);
    std::vector<std::vector<int>> loading_n(k);
    std::vector<int> unassigned(k, 0);
    int n_labels = 0;
    const auto add_label = [&] {
        ++n_labels;
        for (std::size_t i = 0; i < k; ++i) {
            counts[i].push_back(0);
            loading_sum[i].push_back(0.0);
            loading_n[i].push_back(0);
        }
    };

    for (const auto& r : replicates) {
        if (!r.usable) continue;
        ++rep.usable_replicates;
        const auto sets = factor_sets(r);
        std::vector<int> label_of(sets.size(), -1);
        std::vector<bool> label_taken(static_cast<std::size_t>(n_labels), false);
        // greedy matching on accumulated assignment counts
        while (true) {
            int best_f = -1, best_l = -1, best_score = 0;
            for (std::size_t f = 0; f < sets.size(); ++f) {
                if (label_of[f] >= 0) continue;
                for (int l = 0; l < n_labels; ++l) {
                    if (label_taken[static_cast<std::size_t>(l)]) continue;
                    int score = 0;
                    for (auto item : sets[f]) score += counts[item][static_cast<std::size_t>(l)];
                    if (score > best_score) {
                        best_score = score;
                        best_f = static_cast<int>(f);
                        best_l = l;
                    }
                }
            }
            if (best_f < 0) break;
            label_of[static_cast<std::size_t>(best_f)] = best_l;
            label_taken[static_cast<std::size_t>(best_l)] = true;
        }
        for (std::size_t f = 0; f < sets.size(); ++f) {
            if (label_of[f] >= 0 || sets[f].empty()) continue;
            add_label();
            label_of[f] = n_labels - 1;
        }

        std::vector<bool> counted(k, false);
        for (std::size_t i = 0; i < r.items.size(); ++i) {
            const auto item = r.items[i];
            const int f = r.efa.assignment[i];
            if (f >= 0) {
                ++counts[item][static_cast<std::size_t>(label_of[static_cast<std::size_t>(f)])];
                counted[item] = true;
            }
            for (std::size_t g = 0; g < sets.size(); ++g) {
                if (label_of[g] < 0) continue;
                const auto l = static_cast<std::size_t>(label_of[g]);
                loading_sum[item][l] += r.efa.loadings(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g));
                ++loading_n[item][l];
            }
        }
        for (std::size_t i = 0; i < k; ++i)
            if (!counted[i]) ++unassigned[i];
    }
    if (rep.usable_replicates == 0) {
        rep.warnings.push_back("no usable replicate; no structure proposed");
        return rep;
    }

    const double need = consistency * rep.usable_replicates;
    std::vector<std::vector<std::string>> members(static_cast<std::size_t>(n_labels));
    for (std::size_t i = 0; i < k; ++i) {
        ItemSummary s;
        s.item = scale.items[i].id;
        s.counts = counts[i];
        s.unassigned = unassigned[i];
        for (int l = 0; l < n_labels; ++l) {
            const auto n = loading_n[i][static_cast<std::size_t>(l)];
            s.mean_loadings.push_back(n > 0 ? loading_sum[i][static_cast<std::size_t>(l)] / n : 0.0);
        }
        int modal = -1, modal_count = 0;
        for (int l = 0; l < n_labels; ++l)
            if (counts[i][static_cast<std::size_t>(l)] > modal_count) {
                modal_count = counts[i][static_cast<std::size_t>(l)];
                modal = l;
            }
        if (modal >= 0 && modal_count >= need) {
            s.decision = "assigned";
            s.subdimension = modal;
            members[static_cast<std::size_t>(modal)].push_back(s.item);
        } else if (unassigned[i] >= need) {
            s.decision = "dropped";
            rep.dropped.push_back(s.item);
        } else {
            s.decision = "needs review";
            rep.needs_review.push_back(s.item);
        }
        rep.items.push_back(std::move(s));
    }

    // final labels: nonempty subdimensions, renumbered in order of creation
    std::vector<int> final_index(static_cast<std::size_t>(n_labels), -1);
    for (int l = 0; l < n_labels; ++l) {
        rep.subdimension_labels.push_back("D" + std::to_string(l + 1));
        if (members[static_cast<std::size_t>(l)].empty()) continue;
        final_index[static_cast<std::size_t>(l)] = static_cast<int>(rep.structure.subdimensions.size());
        rep.structure.subdimensions.push_back(
            {"D" + std::to_string(rep.structure.subdimensions.size() + 1), members[static_cast<std::size_t>(l)]});
    }
    for (auto& s : rep.items)
        if (s.subdimension >= 0) s.subdimension = final_index[static_cast<std::size_t>(s.subdimension)];

    // residual pairs and CFA pass rate
    std::map<std::pair<std::size_t, std::size_t>, PairSummary> pairs;
    std::map<std::pair<std::size_t, std::size_t>, double> residual_sum;
    int passing = 0;
    for (const auto& r : replicates) {
        if (!r.usable || !r.cfa) continue;
        if (r.cfa->cfi_pass && r.cfa->tli_pass && r.cfa->srmr_pass) ++passing;
        std::vector<std::size_t> cfa_items;
        for (std::size_t i = 0; i < r.items.size(); ++i)
            if (r.efa.assignment[i] >= 0) cfa_items.push_back(r.items[i]);
        for (std::size_t a = 0; a < cfa_items.size(); ++a)
            for (std::size_t b = a + 1; b < cfa_items.size(); ++b) {
                auto key = std::minmax(cfa_items[a], cfa_items[b]);
                auto& ps = pairs[key];
                ++ps.replicates;
                residual_sum[key] += r.cfa->residual(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            }
        for (const auto& [a, b] : r.flagged_pairs) ++pairs[std::minmax(a, b)].flagged;
    }
    rep.cfa_pass_rate = static_cast<double>(passing) / static_cast<double>(replicates.size());
    for (auto& [key, ps] : pairs) {
        if (ps.flagged == 0) continue;
        ps.item_a = scale.items[key.first].id;
        ps.item_b = scale.items[key.second].id;
        ps.mean_residual = residual_sum[key] / ps.replicates;
        rep.residual_pairs.push_back(ps);
    }
    std::stable_sort(rep.residual_pairs.begin(), rep.residual_pairs.end(),
                     [](const PairSummary& a, const PairSummary& b) { return a.flagged > b.flagged; });

    std::set<std::string> seen;
    for (const auto& r : replicates)
        for (const auto& w : r.warnings)
            if (seen.insert(w).second) rep.warnings.push_back(w);
    return rep;
}

namespace {

std::vector<std::size_t> scale_indices(const core::ScaleDefinition& scale, const core::Subdimension& dim) {
    std::vector<std::size_t> out;
    for (const auto& id : dim.items) out.push_back(scale.index_of(id));
    return out;
}

std::vector<int> max_levels_of(const core::ScaleDefinition& scale, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    for (auto k : idx) out.push_back(scale.items[k].max_level);
    return out;
}

}  // namespace

StructuringReport run_structuring(const core::CohortDataset& data, const StructuringOptions& options) {
    options.validate();
    data.validate();
    const auto samples = resample_replicates(data, options.replicates, options.seed);
    std::vector<ReplicateResult> results(samples.size());
    numerics::parallel_for(samples.size(), options.threads,
                           [&](std::size_t j) { results[j] = analyze_replicate(samples[j], data.scale, options); });
    auto rep = aggregate_structure(results, data.scale, options.consistency);

    for (const auto& dim : rep.structure.subdimensions) {
        if (dim.items.size() < 2) continue;
        const auto idx = scale_indices(data.scale, dim);
        const auto levels = max_levels_of(data.scale, idx);
        std::vector<int> passes(idx.size(), 0);
        int runs = 0;
        for (const auto& s : samples) {
            try {
                const auto m = monotonicity_curves(s.responses, idx, levels, options.monotonicity_tolerance);
                ++runs;
                for (std::size_t a = 0; a < idx.size(); ++a) passes[a] += m.curves[a].pass ? 1 : 0;
            } catch (const DomainError&) {
            }
        }
        for (std::size_t a = 0; a < idx.size(); ++a)
            rep.monotonicity_pass_rate[dim.items[a]] = runs > 0 ? static_cast<double>(passes[a]) / runs : 0.0;
    }
    return rep;
}

nlohmann::json to_json(const StructuringReport& report, const core::ScaleDefinition& scale) {
    using nlohmann::json;
    json reps = json::array();
    for (const auto& r : report.replicates) {
        json jr;
        jr["index"] = r.index;
        jr["usable"] = r.usable;
        jr["n_factors"] = r.efa.n_factors;
        jr["eigenvalues"] = std::vector<double>(r.efa.eigenvalues.data(), r.efa.eigenvalues.data() + r.efa.eigenvalues.size());
        json assign = json::object();
        for (std::size_t i = 0; i < r.items.size(); ++i)
            assign[scale.items[r.items[i]].id] = r.efa.assignment.empty() ? -1 : r.efa.assignment[i];
        jr["assignment"] = assign;
        json excluded = json::array();
        for (auto k : r.excluded) excluded.push_back(scale.items[k].id);
        jr["excluded"] = excluded;
        if (r.cfa) {
            jr["cfa"] = {{"cfi", r.cfa->cfi},   {"tli", r.cfa->tli},       {"rmsea", r.cfa->rmsea},
                         {"srmr", r.cfa->srmr}, {"chi2", r.cfa->chi2},     {"df", r.cfa->df},
                         {"converged", r.cfa->converged},                  {"pass", r.cfa->all_pass()}};
        }
        json flagged = json::array();
        for (const auto& [a, b] : r.flagged_pairs) flagged.push_back({scale.items[a].id, scale.items[b].id});
        jr["flagged_pairs"] = flagged;
        reps.push_back(jr);
    }
    json items = json::array();
    for (const auto& s : report.items) {
        json counts = json::object();
        json loadings = json::object();
        for (std::size_t l = 0; l < s.counts.size(); ++l) {
            counts[report.subdimension_labels[l]] = s.counts[l];
            loadings[report.subdimension_labels[l]] = s.mean_loadings[l];
        }
        counts["unassigned"] = s.unassigned;
        items.push_back({{"item", s.item}, {"decision", s.decision}, {"counts", counts}, {"mean_loadings", loadings}});
    }
    json pairs = json::array();
    for (const auto& p : report.residual_pairs)
        pairs.push_back({{"items", {p.item_a, p.item_b}},
                         {"flagged", p.flagged},
                         {"replicates", p.replicates},
                         {"mean_residual", p.mean_residual}});
    return {{"structure", report.structure},
            {"needs_review", report.needs_review},
            {"dropped", report.dropped},
            {"usable_replicates", report.usable_replicates},
            {"cfa_pass_rate", report.cfa_pass_rate},
            {"monotonicity_pass_rate", report.monotonicity_pass_rate},
            {"items", items},
            {"residual_pairs", pairs},
            {"replicates", reps},
            {"warnings", report.warnings}};
}

std::string monotonicity_csv(const core::CohortDataset& data, const StructuringReport& report,
                             const StructuringOptions& options) {
    const auto sample = resample_replicates(data, 1, options.seed).front();
    std::string out = core::format_csv_row(
        {"subdimension", "item", "bin", "rest_score_upper", "n", "mean_level", "level", "p_at_least", "pass"});
    for (const auto& dim : report.structure.subdimensions) {
        if (dim.items.size() < 2) continue;
        const auto idx = scale_indices(data.scale, dim);
        const auto m = monotonicity_curves(sample.responses, idx, max_levels_of(data.scale, idx),
                                           options.monotonicity_tolerance);
        for (const auto& c : m.curves) {
            const auto& id = data.scale.items[c.item].id;
            for (std::size_t b = 0; b < c.counts.size(); ++b)
                for (std::size_t l = 0; l < c.at_least[b].size(); ++l)
                    out += core::format_csv_row({dim.name, id, std::to_string(b + 1), core::format_number(c.bin_upper[b]),
                                                 std::to_string(c.counts[b]), core::format_number(c.mean_level[b]),
                                                 std::to_string(l + 1), core::format_number(c.at_least[b][l]),
                                                 c.pass ? "1" : "0"});
        }
    }
    return out;
}

}  // namespace fours::structuring
