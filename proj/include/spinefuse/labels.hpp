#pragma once

#include "spinefuse/error.hpp"

#include <array>
#include <string>
#include <string_view>

namespace spinefuse {

/// Canonical category count: C1-C7, T1-T13, L1-L6.
inline constexpr int kDefaultCategories = 26;

/// A vertebra category, 1-based as in the anatomical naming.
struct VertebraLabel {
    int index = 1;

    friend constexpr auto operator<=>(VertebraLabel, VertebraLabel) = default;
};

namespace detail {

struct LabelGroup {
    char prefix;
    int first;  // canonical index of the group's first member
    int count;
};

inline constexpr std::array<LabelGroup, 3> kLabelGroups{{{'C', 1, 7}, {'T', 8, 13}, {'L', 21, 6}}};

} // namespace detail

/// Canonical name ("C1" .. "L6"). Throws for indices outside [1, 26].
inline std::string label_name(VertebraLabel label) {
    for (const auto& g : detail::kLabelGroups) {
        if (label.index >= g.first && label.index < g.first + g.count) {
            return std::string(1, g.prefix) + std::to_string(label.index - g.first + 1);
        }
    }
    fail_config("vertebra label index out of range: " + std::to_string(label.index));
}

/// Inverse of label_name.
inline VertebraLabel parse_label(std::string_view name) {
    if (name.size() >= 2) {
        for (const auto& g : detail::kLabelGroups) {
            if (name.front() != g.prefix) continue;
            int number = 0;
            for (char ch : name.substr(1)) {
                if (ch < '0' || ch > '9' || number > 100) fail_data("bad vertebra label: " + std::string(name));
                number = number * 10 + (ch - '0');
            }
            if (number >= 1 && number <= g.count) return VertebraLabel{g.first + number - 1};
        }
    }
    fail_data("bad vertebra label: " + std::string(name));
}

/// Validates a category count against the canonical name table.
inline void check_category_count(int c) {
    if (c < 1 || c > kDefaultCategories) {
        fail_config("category count must be in [1, 26], got " + std::to_string(c));
    }
}

} // namespace spinefuse
