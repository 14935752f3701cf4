#pragma once

// Sentence-level overlap metrics between a QA field and its source chunk, plus
// filtering/sorting of scored pairs. All metrics operate on normalized tokens.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "qgen/porter.hpp"
#include "qgen/text.hpp"

namespace qgen {

using Words = std::vector<std::string>;

namespace detail {

inline void require_nonempty(const Words &cand, const Words &ref) {
    if (cand.empty()) {
        fail(ErrorCode::EmptyCandidate, "candidate has no tokens after normalization");
    }
    if (ref.empty()) {
        fail(ErrorCode::EmptyReference, "reference has no tokens after normalization");
    }
}

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(const Words &w, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    if (w.size() < n) {
        return counts;
    }
    for (std::size_t i = 0; i + n <= w.size(); ++i) {
        ++counts[Words(w.begin() + static_cast<std::ptrdiff_t>(i), w.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

// Clipped matches and candidate total for order n.
inline std::pair<std::size_t, std::size_t> clipped_matches(const Words &cand, const Words &ref, std::size_t n) {
    const auto c = ngram_counts(cand, n);
    const auto r = ngram_counts(ref, n);
    std::size_t matches = 0;
    std::size_t total = 0;
    for (const auto &[gram, count] : c) {
        total += count;
        if (auto it = r.find(gram); it != r.end()) {
            matches += std::min(count, it->second);
        }
    }
    return {matches, total};
}

inline double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

} // namespace detail

/// BLEU-n with brevity penalty and add-one smoothing of zero higher-order precisions.
inline double bleu_n(const Words &cand, const Words &ref, int n) {
    if (n < 1 || n > 4) {
        fail(ErrorCode::InvalidArgument, "bleu order must be in 1..4");
    }
    detail::require_nonempty(cand, ref);
    double log_sum = 0.0;
    for (int k = 1; k <= n; ++k) {
        const auto [m, t] = detail::clipped_matches(cand, ref, static_cast<std::size_t>(k));
        double p = 0.0;
        if (k == 1) {
            if (m == 0) {
                return 0.0;
            }
            p = static_cast<double>(m) / static_cast<double>(t);
        } else if (m == 0) {
            p = 1.0 / static_cast<double>(t + 1);
        } else {
            p = static_cast<double>(m) / static_cast<double>(t);
        }
        log_sum += std::log(p);
    }
    const double c = static_cast<double>(cand.size());
    const double r = static_cast<double>(ref.size());
    const double bp = std::min(1.0, std::exp(1.0 - r / c));
    return bp * std::exp(log_sum / n);
}

inline double bleu_n(std::string_view cand, std::string_view ref, int n) {
    return bleu_n(normalized_words(cand), normalized_words(ref), n);
}

struct RougeScores {
    double rouge1_f = 0.0;
    double rouge2_f = 0.0;
    double rougeL_f = 0.0;
};

inline std::size_t lcs_length(const Words &a, const Words &b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline RougeScores rouge(const Words &cand, const Words &ref) {
    detail::require_nonempty(cand, ref);
    auto rouge_n = [&](std::size_t n) {
        const auto [m, cand_total] = detail::clipped_matches(cand, ref, n);
        const std::size_t ref_total = ref.size() >= n ? ref.size() - n + 1 : 0;
        if (cand_total == 0 || ref_total == 0) {
            return 0.0;
        }
        return detail::f1(static_cast<double>(m) / static_cast<double>(cand_total),
                          static_cast<double>(m) / static_cast<double>(ref_total));
    };
    const auto lcs = static_cast<double>(lcs_length(cand, ref));
    return {rouge_n(1), rouge_n(2),
            detail::f1(lcs / static_cast<double>(cand.size()), lcs / static_cast<double>(ref.size()))};
}

inline RougeScores rouge(std::string_view cand, std::string_view ref) {
    return rouge(normalized_words(cand), normalized_words(ref));
}

/// Unigram METEOR without synonym matching: exact then stemmed greedy alignment,
/// F_mean = 10PR/(R+9P), fragmentation penalty 0.5 * (chunks/matches)^3.
inline double meteor_simple(const Words &cand, const Words &ref) {
    detail::require_nonempty(cand, ref);
    std::vector<std::optional<std::size_t>> align(cand.size());
    std::vector<bool> used(ref.size(), false);

    auto stage = [&](auto &&same) {
        for (std::size_t i = 0; i < cand.size(); ++i) {
            if (align[i]) {
                continue;
            }
            for (std::size_t j = 0; j < ref.size(); ++j) {
                if (!used[j] && same(i, j)) {
                    align[i] = j;
                    used[j] = true;
                    break;
                }
            }
        }
    };
    stage([&](std::size_t i, std::size_t j) { return cand[i] == ref[j]; });
    std::vector<std::string> cand_stems;
    std::vector<std::string> ref_stems;
    for (const auto &w : cand) cand_stems.push_back(porter_stem(w));
    for (const auto &w : ref) ref_stems.push_back(porter_stem(w));
    stage([&](std::size_t i, std::size_t j) { return cand_stems[i] == ref_stems[j]; });

    std::size_t matches = 0;
    std::size_t chunks = 0;
    std::optional<std::size_t> prev_cand;
    std::optional<std::size_t> prev_ref;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (!align[i]) {
            continue;
        }
        ++matches;
        const bool continues = prev_cand && *prev_cand + 1 == i && *prev_ref + 1 == *align[i];
        if (!continues) {
            ++chunks;
        }
        prev_cand = i;
        prev_ref = align[i];
    }
    if (matches == 0) {
        return 0.0;
    }
    const double m = static_cast<double>(matches);
    const double p = m / static_cast<double>(cand.size());
    const double r = m / static_cast<double>(ref.size());
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / m;
    const double penalty = 0.5 * frag * frag * frag;
    return fmean * (1.0 - penalty);
}

inline double meteor_simple(std::string_view cand, std::string_view ref) {
    return meteor_simple(normalized_words(cand), normalized_words(ref));
}

/// Document frequencies over a set of chunk texts.
struct CorpusStats {
    std::size_t n = 0;
    std::map<std::string, std::size_t> df;

    static CorpusStats from_texts(const std::vector<std::string> &texts) {
        CorpusStats s;
        s.n = texts.size();
        for (const auto &t : texts) {
            const auto words = normalized_words(t);
            for (const auto &w : std::set<std::string>(words.begin(), words.end())) {
                ++s.df[w];
            }
        }
        return s;
    }

    [[nodiscard]] double idf(const std::string &term) const {
        const auto it = df.find(term);
        const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
        return std::log((static_cast<double>(n) + 1.0) / (d + 1.0)) + 1.0;
    }
    friend bool operator==(const CorpusStats &, const CorpusStats &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CorpusStats, n, df)

namespace detail {

inline double cosine(const std::map<std::string, double> &a, const std::map<std::string, double> &b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (const auto &[t, v] : a) {
        na += v * v;
        if (auto it = b.find(t); it != b.end()) {
            dot += v * it->second;
        }
    }
    for (const auto &[t, v] : b) {
        nb += v * v;
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

inline std::map<std::string, double> term_counts(const Words &w) {
    std::map<std::string, double> tf;
    for (const auto &t : w) {
        tf[t] += 1.0;
    }
    return tf;
}

} // namespace detail

inline double tfidf_cosine(const Words &cand, const Words &ref, const CorpusStats &stats) {
    if (stats.n == 0) {
        fail(ErrorCode::EmptyCorpus, "tf-idf corpus is empty");
    }
    detail::require_nonempty(cand, ref);
    auto weigh = [&](const Words &w) {
        auto v = detail::term_counts(w);
        for (auto &[t, x] : v) {
            x *= stats.idf(t);
        }
        return v;
    };
    return detail::cosine(weigh(cand), weigh(ref));
}

inline double tfidf_cosine(std::string_view cand, std::string_view ref, const std::vector<std::string> &corpus) {
    if (corpus.empty()) {
        fail(ErrorCode::EmptyCorpus, "tf-idf corpus is empty");
    }
    return tfidf_cosine(normalized_words(cand), normalized_words(ref), CorpusStats::from_texts(corpus));
}

/// Cosine of raw term-count vectors.
inline double count_cosine(const Words &cand, const Words &ref) {
    detail::require_nonempty(cand, ref);
    return detail::cosine(detail::term_counts(cand), detail::term_counts(ref));
}

inline double count_cosine(std::string_view cand, std::string_view ref) {
    return count_cosine(normalized_words(cand), normalized_words(ref));
}

// ---------------------------------------------------------------------------
// Metric reports

enum class Metric { Bleu1, Bleu2, Bleu3, Bleu4, Rouge1F, Rouge2F, RougeLF, Meteor, TfidfCosine, CountCosine };
inline constexpr std::size_t kMetricCount = 10;
inline constexpr std::array<std::string_view, kMetricCount> kMetricNames = {
    "bleu1", "bleu2", "bleu3", "bleu4", "rouge1_f", "rouge2_f", "rougeL_f", "meteor", "tfidf_cosine", "count_cosine"};

enum class Field { Question, Answer, Combined };
inline constexpr std::array<std::string_view, 3> kFieldNames = {"question", "answer", "combined"};

inline std::string_view to_string(Metric m) { return kMetricNames[static_cast<std::size_t>(m)]; }
inline std::string_view to_string(Field f) { return kFieldNames[static_cast<std::size_t>(f)]; }

inline std::optional<Metric> metric_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kMetricCount; ++i) {
        if (kMetricNames[i] == name) {
            return static_cast<Metric>(i);
        }
    }
    return std::nullopt;
}

inline std::optional<Field> field_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
        if (kFieldNames[i] == name) {
            return static_cast<Field>(i);
        }
    }
    return std::nullopt;
}

using MetricSet = std::set<Metric>;

inline MetricSet all_metrics() {
    MetricSet s;
    for (std::size_t i = 0; i < kMetricCount; ++i) {
        s.insert(static_cast<Metric>(i));
    }
    return s;
}

/// Accepts metric names plus the family aliases "bleu", "rouge", "cosine" and "all".
inline MetricSet parse_metric_set(const std::vector<std::string> &names) {
    MetricSet out;
    for (const auto &n : names) {
        if (n == "all") {
            return all_metrics();
        }
        if (n == "bleu") {
            out.insert({Metric::Bleu1, Metric::Bleu2, Metric::Bleu3, Metric::Bleu4});
        } else if (n == "rouge") {
            out.insert({Metric::Rouge1F, Metric::Rouge2F, Metric::RougeLF});
        } else if (n == "cosine") {
            out.insert({Metric::TfidfCosine, Metric::CountCosine});
        } else if (auto m = metric_from_name(n)) {
            out.insert(*m);
        } else {
            fail(ErrorCode::UnknownMetric, "unknown metric '" + n + "'");
        }
    }
    return out;
}

inline std::vector<std::string> metric_set_names(const MetricSet &s) {
    std::vector<std::string> out;
    for (auto m : s) {
        out.emplace_back(to_string(m));
    }
    return out;
}

class MetricReport {
  public:
    using Scores = std::array<std::optional<double>, kMetricCount>;

    [[nodiscard]] std::optional<double> get(Field f, Metric m) const {
        return fields_[static_cast<std::size_t>(f)][static_cast<std::size_t>(m)];
    }
    void set(Field f, Metric m, double v) { fields_[static_cast<std::size_t>(f)][static_cast<std::size_t>(m)] = v; }

    [[nodiscard]] bool empty() const {
        for (const auto &f : fields_) {
            for (const auto &v : f) {
                if (v) return false;
            }
        }
        return true;
    }

    friend bool operator==(const MetricReport &, const MetricReport &) = default;

    friend void to_json(nlohmann::json &j, const MetricReport &r) {
        j = nlohmann::json::object();
        for (std::size_t f = 0; f < 3; ++f) {
            auto obj = nlohmann::json::object();
            for (std::size_t m = 0; m < kMetricCount; ++m) {
                if (const auto &v = r.fields_[f][m]) {
                    obj[std::string(kMetricNames[m])] = *v;
                }
            }
            j[std::string(kFieldNames[f])] = std::move(obj);
        }
    }

    friend void from_json(const nlohmann::json &j, MetricReport &r) {
        r = MetricReport{};
        for (std::size_t f = 0; f < 3; ++f) {
            const auto key = std::string(kFieldNames[f]);
            if (!j.contains(key)) {
                continue;
            }
            for (const auto &[name, v] : j.at(key).items()) {
                const auto m = metric_from_name(name);
                if (!m) {
                    fail(ErrorCode::UnknownMetric, "unknown metric '" + name + "' in report");
                }
                r.fields_[f][static_cast<std::size_t>(*m)] = v.get<double>();
            }
        }
    }

  private:
    std::array<Scores, 3> fields_{};
};

inline MetricReport score_text(const Words &q, const Words &a, const Words &ref, const CorpusStats &stats,
                               const MetricSet &metrics) {
    MetricReport report;
    if (metrics.empty()) {
        return report;
    }
    Words combined = q;
    combined.insert(combined.end(), a.begin(), a.end());
    const std::array<const Words *, 3> fields = {&q, &a, &combined};
    for (std::size_t f = 0; f < 3; ++f) {
        const auto &cand = *fields[f];
        const auto field = static_cast<Field>(f);
        std::optional<RougeScores> rs;
        for (auto m : metrics) {
            double v = 0.0;
            switch (m) {
            case Metric::Bleu1: v = bleu_n(cand, ref, 1); break;
            case Metric::Bleu2: v = bleu_n(cand, ref, 2); break;
            case Metric::Bleu3: v = bleu_n(cand, ref, 3); break;
            case Metric::Bleu4: v = bleu_n(cand, ref, 4); break;
            case Metric::Rouge1F:
            case Metric::Rouge2F:
            case Metric::RougeLF:
                if (!rs) rs = rouge(cand, ref);
                v = m == Metric::Rouge1F ? rs->rouge1_f : m == Metric::Rouge2F ? rs->rouge2_f : rs->rougeL_f;
                break;
            case Metric::Meteor: v = meteor_simple(cand, ref); break;
            case Metric::TfidfCosine: v = tfidf_cosine(cand, ref, stats); break;
            case Metric::CountCosine: v = count_cosine(cand, ref); break;
            }
            report.set(field, m, v);
        }
    }
    return report;
}

/// Scores question, answer and question+" "+answer against the chunk text.
inline MetricReport score_pair(std::string_view question, std::string_view answer, std::string_view chunk_text,
                               const CorpusStats &stats, const MetricSet &metrics) {
    return score_text(normalized_words(question), normalized_words(answer), normalized_words(chunk_text), stats,
                      metrics);
}

// ---------------------------------------------------------------------------
// Filtering and sorting

enum class Comparator { Ge, Gt, Le, Lt };

struct MetricPredicate {
    Metric metric;
    Field field = Field::Combined;
    Comparator cmp = Comparator::Gt;
    double threshold = 0.0;

    [[nodiscard]] bool test(const MetricReport &r) const {
        const auto v = r.get(field, metric);
        if (!v) {
            return false;
        }
        switch (cmp) {
        case Comparator::Ge: return *v >= threshold;
        case Comparator::Gt: return *v > threshold;
        case Comparator::Le: return *v <= threshold;
        case Comparator::Lt: return *v < threshold;
        }
        return false;
    }
};

struct SortKey {
    Metric metric;
    Field field = Field::Combined;
    bool descending = true;
};

struct MetricFilter {
    std::vector<MetricPredicate> predicates;
    std::optional<SortKey> sort;
};

namespace detail {

// "[field.]metric" with field defaulting to combined.
inline std::pair<Field, Metric> parse_metric_ref(std::string_view ref) {
    Field field = Field::Combined;
    std::string_view name = ref;
    if (const auto dot = ref.find('.'); dot != std::string_view::npos) {
        const auto f = field_from_name(ref.substr(0, dot));
        if (!f) {
            fail(ErrorCode::UnknownMetric, "unknown field '" + std::string(ref.substr(0, dot)) + "'");
        }
        field = *f;
        name = ref.substr(dot + 1);
    }
    const auto m = metric_from_name(name);
    if (!m) {
        fail(ErrorCode::UnknownMetric, "unknown metric '" + std::string(name) + "'");
    }
    return {field, *m};
}

} // namespace detail

/// Parses "answer.bleu2>0.8,meteor>=0.3" (comma-separated conjunction).
inline std::vector<MetricPredicate> parse_predicates(std::string_view text) {
    std::vector<MetricPredicate> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto comma = text.find(',', pos);
        if (comma == std::string_view::npos) {
            comma = text.size();
        }
        const auto clause = trim(text.substr(pos, comma - pos));
        pos = comma + 1;
        if (clause.empty()) {
            continue;
        }
        const auto op_pos = clause.find_first_of("<>");
        if (op_pos == std::string::npos) {
            fail(ErrorCode::InvalidArgument, "filter clause '" + clause + "' lacks a comparator");
        }
        MetricPredicate p{};
        std::size_t value_pos = op_pos + 1;
        const bool eq = value_pos < clause.size() && clause[value_pos] == '=';
        if (clause[op_pos] == '>') {
            p.cmp = eq ? Comparator::Ge : Comparator::Gt;
        } else {
            p.cmp = eq ? Comparator::Le : Comparator::Lt;
        }
        value_pos += eq ? 1 : 0;
        std::tie(p.field, p.metric) = detail::parse_metric_ref(trim(clause.substr(0, op_pos)));
        const auto value = trim(clause.substr(value_pos));
        try {
            std::size_t used = 0;
            p.threshold = std::stod(value, &used);
            if (used != value.size()) {
                throw std::invalid_argument(value);
            }
        } catch (const std::exception &) {
            fail(ErrorCode::InvalidArgument, "filter threshold '" + value + "' is not a number");
        }
        out.push_back(p);
    }
    return out;
}

/// Parses "[field.]metric[:asc|:desc]", descending by default.
inline SortKey parse_sort_key(std::string_view text) {
    SortKey key{};
    std::string_view ref = text;
    if (const auto colon = text.find(':'); colon != std::string_view::npos) {
        const auto dir = text.substr(colon + 1);
        if (dir == "asc") {
            key.descending = false;
        } else if (dir != "desc") {
            fail(ErrorCode::InvalidArgument, "sort direction must be asc or desc");
        }
        ref = text.substr(0, colon);
    }
    std::tie(key.field, key.metric) = detail::parse_metric_ref(ref);
    return key;
}

/// Stable conjunctive filter then stable sort. Items lacking the sort metric go last.
template <class T, class GetReport>
std::vector<T> filter_sort(std::vector<T> items, const MetricFilter &f, GetReport &&report_of) {
    std::vector<T> kept;
    kept.reserve(items.size());
    for (auto &item : items) {
        const auto &r = report_of(item);
        const bool ok = std::all_of(f.predicates.begin(), f.predicates.end(),
                                    [&](const MetricPredicate &p) { return p.test(r); });
        if (ok) {
            kept.push_back(std::move(item));
        }
    }
    if (f.sort) {
        const auto key = *f.sort;
        std::stable_sort(kept.begin(), kept.end(), [&](const T &a, const T &b) {
            const auto va = report_of(a).get(key.field, key.metric);
            const auto vb = report_of(b).get(key.field, key.metric);
            if (!va || !vb) {
                return va.has_value() && !vb.has_value();
            }
            return key.descending ? *va > *vb : *va < *vb;
        });
    }
    return kept;
}

inline std::vector<MetricReport> filter_sort(std::vector<MetricReport> reports, const MetricFilter &f) {
    return filter_sort(std::move(reports), f, [](const MetricReport &r) -> const MetricReport & { return r; });
}

} // namespace qgen
