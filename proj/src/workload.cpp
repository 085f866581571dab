#include "knsim/workload.hpp"

#include <array>
#include <stdexcept>
#include <utility>

namespace knsim {

const std::vector<WorkloadProfile>& builtin_profiles() {
    static const std::vector<WorkloadProfile> profiles = {
        {1, 0, 0, 0},           {2, 128, 0, 0},         {3, 128, 1000, 0},
        {4, 128, 10000, 0},     {5, 128, 100000, 0},    {6, 128, 1000, 1000},
        {7, 128, 10000, 1000},  {8, 128, 100000, 1000}, {9, 256, 0, 0},
        {10, 256, 1000, 0},     {11, 256, 10000, 0},    {12, 256, 100000, 0},
        {13, 256, 1000, 1000},  {14, 256, 10000, 1000}, {15, 256, 100000, 1000},
        {16, 512, 0, 0},        {17, 1024, 0, 0},
    };
    return profiles;
}

std::string roman_numeral(int value) {
    static constexpr std::array<std::pair<int, const char*>, 13> table = {{
        {1000, "M"}, {900, "CM"}, {500, "D"}, {400, "CD"}, {100, "C"}, {90, "XC"},
        {50, "L"}, {40, "XL"}, {10, "X"}, {9, "IX"}, {5, "V"}, {4, "IV"}, {1, "I"},
    }};
    std::string out;
    for (const auto& [v, s] : table) {
        while (value >= v) {
            out += s;
            value -= v;
        }
    }
    return out;
}

const WorkloadProfile& builtin_profile(std::string_view id) {
    for (const auto& p : builtin_profiles()) {
        if (id == roman_numeral(p.id) || id == std::to_string(p.id)) {
            return p;
        }
    }
    throw std::invalid_argument("unknown builtin profile '" + std::string(id) + "'");
}

ServiceDemand service_demand(const WorkloadProfile& profile, const CalibrationConstants& calib) {
    return ServiceDemand{
        calib.cpu_base_ms + calib.cpu_ms_per_unit_prime * profile.prime_n + calib.cpu_ms_per_mb_bloat * profile.bloat_mb,
        calib.mem_overhead_mb + profile.bloat_mb,
        profile.sleep_ms,
    };
}

}  // namespace knsim
