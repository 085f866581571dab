#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace knsim {

// One synthetic autoscale-go style workload: memory bloat, prime search bound
// and sleep, all passed per request.
struct WorkloadProfile {
    int id = 0;
    double bloat_mb = 0.0;
    double prime_n = 0.0;
    double sleep_ms = 0.0;

    bool operator==(const WorkloadProfile&) const = default;
};

// Affine cost model that maps application parameters onto simulator demand.
struct CalibrationConstants {
    double cpu_base_ms = 1.0;
    double cpu_ms_per_unit_prime = 0.001;
    // Touching the bloat allocation page by page.
    double cpu_ms_per_mb_bloat = 0.05;
    double mem_overhead_mb = 8.0;
};

struct ServiceDemand {
    double cpu_ms = 0.0;
    double mem_mb = 0.0;
    double wait_ms = 0.0;

    bool operator==(const ServiceDemand&) const = default;
};

/// The seventeen concurrency-test workloads, ids 1..17 (I..XVII).
const std::vector<WorkloadProfile>& builtin_profiles();

/// Looks up a builtin profile by Roman numeral ("VII") or decimal id ("7").
/// Throws std::invalid_argument for anything else.
const WorkloadProfile& builtin_profile(std::string_view id);

std::string roman_numeral(int value);

ServiceDemand service_demand(const WorkloadProfile& profile, const CalibrationConstants& calib);

}  // namespace knsim
