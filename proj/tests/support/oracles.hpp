#pragma once

// Reference implementations written straight from the definitions. They share no code with the
// library and favour obviousness over speed, so the tests can compare the two.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

using Point = std::vector<double>;

inline double dist(const Point& a, const Point& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// Brute-force SWA: sum of scores at or above the threshold, divided by N.
inline double swa(const std::vector<double>& scores, double t) {
    double total = 0;
    for (double s : scores)
        if (s >= t) total += s;
    return total / static_cast<double>(scores.size());
}

inline std::map<int, std::vector<std::size_t>> members(const std::vector<int>& labels) {
    std::map<int, std::vector<std::size_t>> m;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= 0) m[labels[i]].push_back(i);
    return m;
}

inline Point centroid(const std::vector<Point>& x, const std::vector<std::size_t>& idx) {
    Point c(x[0].size(), 0.0);
    for (auto i : idx)
        for (std::size_t d = 0; d < c.size(); ++d) c[d] += x[i][d];
    for (auto& v : c) v /= static_cast<double>(idx.size());
    return c;
}

/// Mean silhouette over clustered points. Singleton clusters score 0.
inline double silhouette(const std::vector<Point>& x, const std::vector<int>& labels) {
    const auto m = members(labels);
    double total = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (labels[i] < 0) continue;
        ++n;
        const auto& own = m.at(labels[i]);
        if (own.size() == 1) continue;
        double a = 0;
        for (auto j : own)
            if (j != i) a += dist(x[i], x[j]);
        a /= static_cast<double>(own.size() - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [id, other] : m) {
            if (id == labels[i]) continue;
            double d = 0;
            for (auto j : other) d += dist(x[i], x[j]);
            b = std::min(b, d / static_cast<double>(other.size()));
        }
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

inline double davies_bouldin(const std::vector<Point>& x, const std::vector<int>& labels) {
    const auto m = members(labels);
    std::vector<Point> c;
    std::vector<double> s;
    for (const auto& [id, idx] : m) {
        c.push_back(centroid(x, idx));
        double sc = 0;
        for (auto i : idx) sc += dist(x[i], c.back());
        s.push_back(sc / static_cast<double>(idx.size()));
    }
    double total = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        double worst = 0;
        for (std::size_t j = 0; j < c.size(); ++j)
            if (i != j) worst = std::max(worst, (s[i] + s[j]) / dist(c[i], c[j]));
        total += worst;
    }
    return total / static_cast<double>(c.size());
}

inline double calinski_harabasz(const std::vector<Point>& x, const std::vector<int>& labels) {
    const auto m = members(labels);
    std::vector<std::size_t> all;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (labels[i] >= 0) all.push_back(i);
    const auto overall = centroid(x, all);
    double between = 0, within = 0;
    for (const auto& [id, idx] : m) {
        const auto c = centroid(x, idx);
        between += static_cast<double>(idx.size()) * std::pow(dist(c, overall), 2);
        for (auto i : idx) within += std::pow(dist(x[i], c), 2);
    }
    const double n = static_cast<double>(all.size()), k = static_cast<double>(m.size());
    return (between / (k - 1)) / (within / (n - k));
}

/// ARI by counting agreeing pairs over all n(n-1)/2 pairs.
inline double adjusted_rand(const std::vector<int>& a, const std::vector<int>& b) {
    double both = 0, in_a = 0, in_b = 0, pairs = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const bool sa = a[i] == a[j], sb = b[i] == b[j];
            both += sa && sb;
            in_a += sa;
            in_b += sb;
            pairs += 1;
        }
    const double expected = in_a * in_b / pairs;
    const double max_index = (in_a + in_b) / 2;
    if (max_index == expected) return 1.0;
    return (both - expected) / (max_index - expected);
}

/// Run-length encoding: (value, first index, last index) per maximal run.
struct Run {
    std::string value;
    std::size_t first, last;
};

inline std::vector<Run> rle(const std::vector<std::string>& seq) {
    std::vector<Run> out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!out.empty() && out.back().value == seq[i]) out.back().last = i;
        else out.push_back({seq[i], i, i});
    }
    return out;
}

/// Character trigram cosine on lowercased ASCII, built from the substrings themselves.
inline double trigram_cosine(const std::string& a, const std::string& b) {
    auto grams = [](std::string s) {
        for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        std::map<std::string, double> g;
        if (s.size() < 3) g[s] += 1;
        else
            for (std::size_t i = 0; i + 3 <= s.size(); ++i) g[s.substr(i, 3)] += 1;
        return g;
    };
    const auto ga = grams(a), gb = grams(b);
    double dot = 0, na = 0, nb = 0;
    for (const auto& [k, v] : ga) {
        na += v * v;
        if (auto it = gb.find(k); it != gb.end()) dot += v * it->second;
    }
    for (const auto& [k, v] : gb) nb += v * v;
    return dot / std::sqrt(na * nb);
}

// ---------------------------------------------------------------------------
// Minimal XML reader for XES, independent of the library's parser.

struct Node {
    std::string tag;
    std::vector<std::pair<std::string, std::string>> attrs;
    std::vector<Node> children;

    std::optional<std::string> attr(const std::string& k) const {
        for (const auto& [a, v] : attrs)
            if (a == k) return v;
        return std::nullopt;
    }
};

inline std::string unescape(const std::string& s) {
    static const std::pair<const char*, const char*> kEntities[] = {
        {"&lt;", "<"}, {"&gt;", ">"}, {"&quot;", "\""}, {"&apos;", "'"}, {"&#10;", "\n"}, {"&#13;", "\r"}, {"&#9;", "\t"},
        {"&#xA;", "\n"}, {"&#xD;", "\r"}, {"&#x9;", "\t"}, {"&amp;", "&"}};
    std::string out;
    for (std::size_t i = 0; i < s.size();) {
        bool matched = false;
        if (s[i] == '&') {
            for (const auto& [from, to] : kEntities) {
                const std::string f = from;
                if (s.compare(i, f.size(), f) == 0) {
                    out += to;
                    i += f.size();
                    matched = true;
                    break;
                }
            }
            if (!matched) throw std::runtime_error("unknown entity at " + std::to_string(i));
        } else {
            out += s[i++];
        }
    }
    return out;
}

class XmlReader {
public:
    explicit XmlReader(const std::string& s) : s_(s) {}

    Node parse_document() {
        skip_misc();
        Node root = element();
        skip_misc();
        if (pos_ != s_.size()) throw std::runtime_error("trailing content");
        return root;
    }

private:
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    void skip_misc() {
        for (;;) {
            skip_ws();
            if (s_.compare(pos_, 2, "<?") == 0) pos_ = s_.find("?>", pos_) + 2;
            else if (s_.compare(pos_, 4, "<!--") == 0) pos_ = s_.find("-->", pos_) + 3;
            else return;
        }
    }
    std::string name() {
        const auto start = pos_;
        while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) && s_[pos_] != '>' && s_[pos_] != '/' &&
               s_[pos_] != '=')
            ++pos_;
        return s_.substr(start, pos_ - start);
    }
    Node element() {
        if (s_[pos_] != '<') throw std::runtime_error("expected '<'");
        ++pos_;
        Node n;
        n.tag = name();
        for (;;) {
            skip_ws();
            if (s_.compare(pos_, 2, "/>") == 0) {
                pos_ += 2;
                return n;
            }
            if (s_[pos_] == '>') {
                ++pos_;
                break;
            }
            auto key = name();
            skip_ws();
            if (s_[pos_++] != '=') throw std::runtime_error("expected '='");
            skip_ws();
            const char q = s_[pos_++];
            const auto end = s_.find(q, pos_);
            n.attrs.emplace_back(key, unescape(s_.substr(pos_, end - pos_)));
            pos_ = end + 1;
        }
        for (;;) {
            skip_misc();
            if (s_.compare(pos_, 2, "</") == 0) {
                pos_ += 2;
                if (name() != n.tag) throw std::runtime_error("mismatched close tag");
                skip_ws();
                ++pos_;
                return n;
            }
            n.children.push_back(element());
        }
    }

    const std::string& s_;
    std::size_t pos_ = 0;
};

/// Flattened XES content: log string attributes and per trace (name, events as attribute maps).
struct XesContent {
    std::vector<std::pair<std::string, std::string>> log_attributes;
    std::vector<std::pair<std::string, std::vector<std::map<std::string, std::string>>>> traces;
};

inline XesContent read_xes(const std::string& xml) {
    const Node root = XmlReader(xml).parse_document();
    if (root.tag != "log") throw std::runtime_error("root is not <log>");
    XesContent out;
    for (const auto& c : root.children) {
        if (c.tag == "string") out.log_attributes.emplace_back(*c.attr("key"), *c.attr("value"));
        if (c.tag != "trace") continue;
        std::string trace_name;
        std::vector<std::map<std::string, std::string>> events;
        for (const auto& t : c.children) {
            if (t.tag == "string" && t.attr("key") == "concept:name") trace_name = *t.attr("value");
            if (t.tag != "event") continue;
            std::map<std::string, std::string> ev;
            for (const auto& a : t.children) ev[*a.attr("key")] = *a.attr("value");
            events.push_back(std::move(ev));
        }
        out.traces.emplace_back(trace_name, std::move(events));
    }
    return out;
}

} // namespace oracle
