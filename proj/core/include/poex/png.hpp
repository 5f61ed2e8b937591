#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace poex {

// 8-bit grayscale PNG; values clamped to [0, 1].
void write_png_gray(const std::string& path, const Eigen::MatrixXd& img);

// Images tiled left to right with a 1px separator, scaled up by `scale`.
void write_png_strip(const std::string& path, const std::vector<Eigen::MatrixXd>& images,
                     int scale = 4);

// Minimal line plot of one or more series on a shared x axis (the index).
void write_png_plot(const std::string& path, const std::vector<std::vector<double>>& series,
                    int width = 640, int height = 360);

}  // namespace poex
