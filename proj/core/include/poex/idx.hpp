#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace poex {

struct IdxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// uint8 image stack from an IDX3 file, pixel values scaled to [0, 1].
// Each returned matrix is H x W.
struct IdxImages {
  int h = 0, w = 0;
  std::vector<Eigen::MatrixXd> images;
};

IdxImages load_idx_images(const std::string& path);
std::vector<uint8_t> load_idx_labels(const std::string& path);

// Writers round to uint8; used to bundle small datasets.
void save_idx_images(const std::string& path, const std::vector<Eigen::MatrixXd>& images);
void save_idx_labels(const std::string& path, const std::vector<uint8_t>& labels);

}  // namespace poex
