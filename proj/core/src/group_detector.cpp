#include "qsid/group_detector.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "qsid/error.hpp"
#include "qsid/synthetic_control.hpp"

namespace qsid {
namespace {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<std::size_t> parent_;
};

double max_cs(const StudentSet& set, std::span<const StudentMetrics> metrics) {
    double best = 0.0;
    for (std::size_t i : set) best = std::max(best, metrics[i].cs);
    return best;
}

const std::string& smallest_id(const StudentSet& set, std::span<const std::string> ids) {
    const std::string* best = &ids[set.front()];
    for (std::size_t i : set) {
        if (ids[i] < *best) best = &ids[i];
    }
    return *best;
}

}  // namespace

std::string_view to_string(RiskBin bin) {
    switch (bin) {
        case RiskBin::low_risk_f1: return "low_risk_f1";
        case RiskBin::medium_risk_f2: return "medium_risk_f2";
        case RiskBin::high_risk_f3: return "high_risk_f3";
    }
    return "unknown";
}

RiskBin risk_bin_from_string(std::string_view text) {
    if (text == "low_risk_f1") return RiskBin::low_risk_f1;
    if (text == "medium_risk_f2") return RiskBin::medium_risk_f2;
    if (text == "high_risk_f3") return RiskBin::high_risk_f3;
    throw InvalidArgument("unknown risk bin '" + std::string(text) + "'");
}

std::vector<StudentSet> provisional_groups(std::span<const StudentMetrics> metrics,
                                           std::span<const std::string> ids, double c1, double c2) {
    if (!(c2 > c1 && c1 > 0.0)) throw ConfigError("provisional groups need c2 > c1 > 0");
    if (ids.size() != metrics.size()) throw InvalidArgument("ids and metrics differ in length");
    const std::size_t n = metrics.size();
    DisjointSets sets(n);
    std::vector<bool> flagged(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = metrics[i].partner1;
        const double a = metrics[i].cs;
        const double b = metrics[j].cs;
        if (a >= c1 && b >= c1 && std::max(a, b) >= c2) {
            sets.unite(i, j);
            flagged[i] = flagged[j] = true;
        }
    }
    std::map<std::size_t, StudentSet> components;
    for (std::size_t i = 0; i < n; ++i) {
        if (flagged[i]) components[sets.find(i)].push_back(i);
    }
    std::vector<StudentSet> out;
    out.reserve(components.size());
    for (auto& [root, members] : components) out.push_back(std::move(members));

    std::vector<double> keys(out.size());
    for (std::size_t k = 0; k < out.size(); ++k) keys[k] = max_cs(out[k], metrics);
    std::vector<std::size_t> order(out.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (keys[a] != keys[b]) return keys[a] > keys[b];
        return smallest_id(out[a], ids) < smallest_id(out[b], ids);
    });
    std::vector<StudentSet> sorted;
    sorted.reserve(out.size());
    for (std::size_t k : order) sorted.push_back(std::move(out[k]));
    return sorted;
}

std::vector<CollusionGroup> merge_groups(std::span<const StudentSet> provisional,
                                         std::span<const StudentMetrics> metrics,
                                         std::span<const std::string> ids) {
    std::vector<StudentSet> sets(provisional.begin(), provisional.end());
    std::vector<std::size_t> owner(metrics.size(), sets.size());
    for (std::size_t k = 0; k < sets.size(); ++k) {
        for (std::size_t i : sets[k]) owner.at(i) = k;
    }

    std::vector<CollusionGroup> groups;
    for (std::size_t k = 0; k < sets.size(); ++k) {
        if (sets[k].empty()) continue;
        StudentSet merged = sets[k];

        // Students outside T_k named as 2nd partner by at least two members of T_k.
        std::map<std::size_t, std::size_t> shared;
        for (std::size_t i : sets[k]) {
            if (metrics[i].partner2) ++shared[*metrics[i].partner2];
        }
        std::vector<std::size_t> candidates;
        for (const auto& [l, count] : shared) {
            if (count >= 2 && owner[l] != k) candidates.push_back(l);
        }
        std::sort(candidates.begin(), candidates.end(),
                  [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

        for (std::size_t l : candidates) {
            const std::size_t s = owner[l];
            if (s < sets.size() && s > k && !sets[s].empty()) {
                merged.insert(merged.end(), sets[s].begin(), sets[s].end());
                sets[s].clear();
            }
        }
        sets[k].clear();

        CollusionGroup g;
        g.members = std::move(merged);
        std::sort(g.members.begin(), g.members.end(), [&](std::size_t a, std::size_t b) {
            if (metrics[a].cs != metrics[b].cs) return metrics[a].cs > metrics[b].cs;
            return ids[a] < ids[b];
        });
        g.max_cs = metrics[g.members.front()].cs;
        groups.push_back(std::move(g));
    }
    return groups;
}

std::vector<CollusionGroup> assign_bins(std::vector<CollusionGroup> groups, const Thresholds& t,
                                        const FprLevels& levels) {
    if (!t.strictly_increasing()) throw ConfigError("thresholds must satisfy 0 < c1 < c2 < c3 < c4");
    if (!(levels.f1 < levels.f2 && levels.f2 < levels.f3)) {
        throw ConfigError("FPR levels must satisfy f1 < f2 < f3");
    }
    for (auto& g : groups) {
        if (g.max_cs >= t.c4) {
            g.bin = RiskBin::low_risk_f1;
        } else if (g.max_cs >= t.c3) {
            g.bin = RiskBin::medium_risk_f2;
        } else if (g.max_cs >= t.c2) {
            g.bin = RiskBin::high_risk_f3;
        } else {
            throw InternalError("collusion group with max CS " + std::to_string(g.max_cs) +
                                " below c2 = " + std::to_string(t.c2));
        }
        g.emp_fpr = levels[*g.bin];
    }
    return groups;
}

std::vector<CollusionGroup> detect_groups(std::span<const StudentMetrics> metrics,
                                          std::span<const std::string> ids, const Thresholds& t,
                                          const FprLevels& levels) {
    if (!t.strictly_increasing()) throw ConfigError("thresholds must satisfy 0 < c1 < c2 < c3 < c4");
    const auto provisional = provisional_groups(metrics, ids, t.c1, t.c2);
    return assign_bins(merge_groups(provisional, metrics, ids), t, levels);
}

std::array<std::size_t, 3> cumulative_bin_counts(std::span<const CollusionGroup> groups) {
    std::array<std::size_t, 3> per_bin{};
    for (const auto& g : groups) {
        if (!g.bin) throw InternalError("group has no risk bin");
        per_bin[static_cast<std::size_t>(*g.bin)] += g.members.size();
    }
    return {per_bin[0], per_bin[0] + per_bin[1], per_bin[0] + per_bin[1] + per_bin[2]};
}

std::vector<CollusionGroup> apply_synfpr_exclusion(std::vector<CollusionGroup> groups,
                                                   const SynFprEstimate& syn) {
    for (auto& g : groups) {
        if (!g.bin) throw InternalError("group has no risk bin");
        const double rate = syn.cumulative[static_cast<std::size_t>(*g.bin)];
        g.syn_fpr = rate;
        g.excluded = rate > kSynFprExclusion;
    }
    return groups;
}

}  // namespace qsid
