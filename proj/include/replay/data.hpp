#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>

#include "replay/protocol.hpp"

namespace replay {

struct RawDataset {
    Eigen::MatrixXd images;   // N x 784, pixel bytes / 255
    std::vector<int> labels;  // N, 0..9
    int size() const { return static_cast<int>(labels.size()); }
};

// Raised with a distinct message per failure mode: wrong magic, truncated
// payload, image/label count mismatch.
class IdxError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Big-endian IDX pair: magic 0x803 (images, rows=cols=28) / 0x801 (labels).
RawDataset load_idx(const std::string& images_path, const std::string& labels_path);

struct PermutedMnistRecipe {
    int total_tasks = 23;  // 3 CV + 20 EV
    int cv_tasks = 3;
    int per_task_train = 60000;
    int per_task_test = 10000;
    std::uint64_t seed = 0;
};

struct RotatedMnistPairRecipe {
    double angle_task1 = 0.0;  // degrees
    double angle_task2 = 10.0;
    int task2_train_count = 1000;
    std::uint64_t seed = 0;
};

struct SyntheticGaussianRecipe {
    int tasks = 2;             // EV tasks; 3 CV tasks are added on top
    int classes = 2;
    int dim = 8;
    int train_per_class = 50;
    int test_per_class = 20;
    double noise = 0.1;
    std::uint64_t seed = 0;
};

// Task k applies a seeded pixel permutation to every image; EV task 1 keeps
// the identity. 3 CV tasks (ids -3..-1) precede T EV tasks (ids 1..T).
TaskStream make_permuted_stream(std::shared_ptr<const RawDataset> train,
                                std::shared_ptr<const RawDataset> test,
                                const PermutedMnistRecipe& recipe);

// Two EV tasks rotated about the image center (bilinear, zero fill); task 2
// train set truncated to task2_train_count.
TaskStream make_rotation_pair(std::shared_ptr<const RawDataset> train,
                              std::shared_ptr<const RawDataset> test,
                              const RotatedMnistPairRecipe& recipe);

// Rotate one 28x28 image (row-major 784 vector) counterclockwise.
Eigen::VectorXd rotate_image(const Eigen::VectorXd& image, double degrees);

// Seeded Gaussian blobs around task-and-class-specific means; linearly
// separable at small noise.
TaskStream make_synthetic_stream(const SyntheticGaussianRecipe& recipe);

}  // namespace replay
