#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "gridlode/error.hpp"

namespace gridlode {

/// Per-record min-max scaling statistics over observed entries.
/// Zero-range records map to 0 and denormalize back to the constant.
struct NormStats {
    double min = 0.0;
    double max = 1.0;

    double range() const { return max - min; }
    bool zero_range() const { return max == min; }

    double normalize(double x) const {
        return zero_range() ? 0.0 : (x - min) / (max - min);
    }
    double denormalize(double v) const {
        return zero_range() ? min : min + v * (max - min);
    }
};

/// One record's time series as consumed by the model: N time points by
/// data_dim channels, row-major, with a 0/1 availability mask. Entries with
/// mask 0 hold a sentinel (NaN) and are never read.
struct Series {
    std::vector<double> times;
    std::vector<double> values;  // N * data_dim
    std::vector<double> mask;    // N * data_dim
    std::size_t data_dim = 1;

    std::size_t length() const { return times.size(); }

    bool observed(std::size_t t, std::size_t d = 0) const {
        return mask[t * data_dim + d] > 0.5;
    }
    double value(std::size_t t, std::size_t d = 0) const {
        return values[t * data_dim + d];
    }

    std::size_t observed_count() const {
        std::size_t n = 0;
        for (double m : mask) n += m > 0.5 ? 1 : 0;
        return n;
    }

    void validate() const {
        if (values.size() != times.size() * data_dim ||
            mask.size() != values.size())
            throw ContractError("series: values/mask must be N x data_dim");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1]))
                throw ContractError("series: times must be strictly increasing");
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] != 0.0 && mask[i] != 1.0)
                throw ContractError("series: mask entries must be 0 or 1");
            if (mask[i] == 1.0 && !std::isfinite(values[i]))
                throw ContractError("series: observed value must be finite");
        }
    }
};

}  // namespace gridlode
