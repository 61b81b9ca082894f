#pragma once

#include <string>

#include <json.hpp>

#include "ctmm/cohort/types.hpp"
#include "ctmm/io/container.hpp"

namespace ctmm::cohort {

inline constexpr const char* kCohortMagic = "CTMMCOHT";
inline constexpr int kCohortFormatVersion = 1;

nlohmann::json config_to_json(const CohortConfig& c);
/// Strict: unknown keys and invalid values throw io::ConfigError naming the field.
CohortConfig config_from_json(const nlohmann::json& j, const std::string& path = "cohort");

std::vector<std::uint8_t> serialize_cohort(const Cohort& cohort);
Cohort deserialize_cohort(std::vector<std::uint8_t> bytes);
void save_cohort(const Cohort& cohort, const std::string& path);
Cohort load_cohort(const std::string& path);

}  // namespace ctmm::cohort
