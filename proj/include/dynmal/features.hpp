#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dynmal/error.hpp"
#include "dynmal/trace.hpp"

namespace dynmal {

/// Dense row-major sample matrix.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    static FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows) {
        FeatureMatrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != m.cols_) throw DimensionError("ragged feature rows");
            std::copy(rows[r].begin(), rows[r].end(), m.data_.begin() + static_cast<std::ptrdiff_t>(r * m.cols_));
        }
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const noexcept { return data_; }

    void append_row(std::span<const double> values) {
        if (rows_ == 0 && cols_ == 0) cols_ = values.size();
        if (values.size() != cols_) throw DimensionError("row width mismatch");
        data_.insert(data_.end(), values.begin(), values.end());
        ++rows_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Classifier output. Every model in the library labels malware iff score >= 0.5.
struct Prediction {
    Label label = Label::malware;
    double score = 0.5;  // malware confidence in [0, 1]

    static Prediction from_score(double score) {
        return {score >= 0.5 ? Label::malware : Label::goodware, score};
    }
};

}  // namespace dynmal
