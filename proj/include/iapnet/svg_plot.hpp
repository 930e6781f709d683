#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "iapnet/cohort_analysis.hpp"
#include "iapnet/model.hpp"

namespace iapnet::plot {

// Static SVG documents. Histogram panels are laid out side by side, one per
// histogram (typically one per subset).
std::string histogram_panels(std::span<const IapHistogram> panels, const std::string& title);
std::string correlation_heatmap(const CorrelationMatrix& matrix, const std::string& title);
std::string training_curve(const TrainingCurve& curve);

void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace iapnet::plot
