#pragma once

#include <array>
#include <string>
#include <string_view>

#include "ren/errors.hpp"

namespace ren {

/// Training configurations of the ablation ladder. Each adds one mechanism to the previous:
///   source_only - supervised source loss only
///   cdan        - + conditional adversarial loss on raw student predictions
///   cdan_m      - + EMA teacher (used for evaluation only)
///   cdan_m_d    - + student- and teacher-conditioned adversarial losses on ensembled predictions
///   ren         - + student/teacher consistency
enum class Variant { source_only, cdan, cdan_m, cdan_m_d, ren };

inline constexpr std::array<Variant, 5> kAllVariants = {Variant::source_only, Variant::cdan, Variant::cdan_m,
                                                        Variant::cdan_m_d, Variant::ren};

/// The ladder the ablation ordering is checked on.
inline constexpr std::array<Variant, 4> kAblationLadder = {Variant::cdan, Variant::cdan_m, Variant::cdan_m_d,
                                                           Variant::ren};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::source_only: return "source_only";
    case Variant::cdan: return "cdan";
    case Variant::cdan_m: return "cdan_m";
    case Variant::cdan_m_d: return "cdan_m_d";
    case Variant::ren: return "ren";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected source_only, cdan, cdan_m, cdan_m_d or ren)");
}

inline bool uses_adversarial(Variant v) { return v != Variant::source_only; }
inline bool has_teacher(Variant v) { return v == Variant::cdan_m || v == Variant::cdan_m_d || v == Variant::ren; }
inline bool uses_dual_conditioning(Variant v) { return v == Variant::cdan_m_d || v == Variant::ren; }
inline bool uses_consistency(Variant v) { return v == Variant::ren; }

}  // namespace ren
