#include "knsim/workload.hpp"

#include <gtest/gtest.h>

#include <stdexcept>

namespace knsim {
namespace {

// Calibration with only the three affine constants, no bloat CPU term.
CalibrationConstants affine_only() {
    CalibrationConstants c;
    c.cpu_base_ms = 1.0;
    c.cpu_ms_per_unit_prime = 0.001;
    c.mem_overhead_mb = 8.0;
    c.cpu_ms_per_mb_bloat = 0.0;
    return c;
}

TEST(BuiltinProfiles, SeventeenRowsInOrder) {
    const auto& p = builtin_profiles();
    ASSERT_EQ(p.size(), 17u);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i].id, static_cast<int>(i) + 1);
}

TEST(BuiltinProfiles, MatchesTableCells) {
    struct Row {
        double bloat, prime, sleep;
    };
    const Row table[] = {
        {0, 0, 0},          {128, 0, 0},     {128, 1000, 0},    {128, 10000, 0},   {128, 100000, 0},
        {128, 1000, 1000},  {128, 10000, 1000}, {128, 100000, 1000}, {256, 0, 0},  {256, 1000, 0},
        {256, 10000, 0},    {256, 100000, 0}, {256, 1000, 1000}, {256, 10000, 1000}, {256, 100000, 1000},
        {512, 0, 0},        {1024, 0, 0},
    };
    const auto& p = builtin_profiles();
    for (std::size_t i = 0; i < 17; ++i) {
        SCOPED_TRACE(roman_numeral(p[i].id));
        EXPECT_EQ(p[i].bloat_mb, table[i].bloat);
        EXPECT_EQ(p[i].prime_n, table[i].prime);
        EXPECT_EQ(p[i].sleep_ms, table[i].sleep);
    }
}

TEST(BuiltinProfiles, NamedRows) {
    const auto& p = builtin_profiles();
    EXPECT_EQ(p[6], (WorkloadProfile{7, 128, 10000, 1000}));
    EXPECT_EQ(p[0], (WorkloadProfile{1, 0, 0, 0}));
    EXPECT_EQ(p[9], (WorkloadProfile{10, 256, 1000, 0}));
}

TEST(BuiltinProfiles, LookupByRomanOrDecimal) {
    EXPECT_EQ(builtin_profile("VII").id, 7);
    EXPECT_EQ(builtin_profile("7").id, 7);
    EXPECT_EQ(builtin_profile("XVII").id, 17);
    EXPECT_EQ(builtin_profile("I").id, 1);
    EXPECT_THROW(builtin_profile("XVIII"), std::invalid_argument);
    EXPECT_THROW(builtin_profile("0"), std::invalid_argument);
    EXPECT_THROW(builtin_profile("vii"), std::invalid_argument);
    EXPECT_THROW(builtin_profile(""), std::invalid_argument);
}

TEST(RomanNumeral, Basics) {
    EXPECT_EQ(roman_numeral(1), "I");
    EXPECT_EQ(roman_numeral(4), "IV");
    EXPECT_EQ(roman_numeral(9), "IX");
    EXPECT_EQ(roman_numeral(14), "XIV");
    EXPECT_EQ(roman_numeral(17), "XVII");
}

TEST(ServiceDemand, AffineExamples) {
    const auto c = affine_only();
    EXPECT_EQ(service_demand({0, 0, 0, 0}, c), (ServiceDemand{1, 8, 0}));
    EXPECT_EQ(service_demand({0, 128, 10000, 1000}, c), (ServiceDemand{11, 136, 1000}));
    EXPECT_EQ(service_demand({0, 256, 100000, 0}, c), (ServiceDemand{101, 264, 0}));
}

TEST(ServiceDemand, BloatCpuTerm) {
    auto c = affine_only();
    c.cpu_ms_per_mb_bloat = 0.05;
    EXPECT_DOUBLE_EQ(service_demand({0, 256, 1000, 0}, c).cpu_ms, 1.0 + 1.0 + 12.8);
    EXPECT_DOUBLE_EQ(service_demand(builtin_profile("X"), CalibrationConstants{}).cpu_ms, 14.8);
}

TEST(ServiceDemand, MonotoneInEveryParameter) {
    const CalibrationConstants c;
    const double values[] = {0, 1, 64, 128, 1000, 10000, 100000};
    for (double b : values)
        for (double p : values)
            for (double s : values) {
                const auto base = service_demand({0, b, p, s}, c);
                EXPECT_EQ(base.wait_ms, s);
                for (const auto& bumped : {WorkloadProfile{0, b + 1, p, s}, WorkloadProfile{0, b, p + 1, s},
                                           WorkloadProfile{0, b, p, s + 1}}) {
                    const auto d = service_demand(bumped, c);
                    EXPECT_GE(d.cpu_ms, base.cpu_ms);
                    EXPECT_GE(d.mem_mb, base.mem_mb);
                    EXPECT_GE(d.wait_ms, base.wait_ms);
                }
            }
}

}  // namespace
}  // namespace knsim
