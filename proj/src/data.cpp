#include "replay/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "replay/rng.hpp"

namespace replay {

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IdxError("truncated IDX header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::vector<int> sample_rows(int n, int want, Rng& rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (want < n) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(want);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

TaskSplit split_from(std::shared_ptr<const Eigen::MatrixXd> data,
                     std::shared_ptr<const std::vector<int>> labels, std::vector<int> rows,
                     std::vector<int> perm = {}) {
    TaskSplit s;
    s.data = std::move(data);
    s.labels = std::move(labels);
    s.rows = std::move(rows);
    s.pixel_perm = std::move(perm);
    return s;
}

}  // namespace

RawDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IdxError("cannot open image file " + images_path);
    if (std::uint32_t magic = read_be32(img, images_path); magic != 0x803)
        throw IdxError("wrong magic in image file " + images_path + " (got " +
                       std::to_string(magic) + ", want 2051)");
    const std::uint32_t n = read_be32(img, images_path);
    const std::uint32_t rows = read_be32(img, images_path);
    const std::uint32_t cols = read_be32(img, images_path);
    const std::size_t d = std::size_t(rows) * cols;

    std::vector<unsigned char> pixels(std::size_t(n) * d);
    if (!img.read(reinterpret_cast<char*>(pixels.data()), pixels.size()))
        throw IdxError("truncated image payload in " + images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IdxError("cannot open label file " + labels_path);
    if (std::uint32_t magic = read_be32(lab, labels_path); magic != 0x801)
        throw IdxError("wrong magic in label file " + labels_path + " (got " +
                       std::to_string(magic) + ", want 2049)");
    const std::uint32_t n_lab = read_be32(lab, labels_path);
    if (n_lab != n)
        throw IdxError("image/label count mismatch: " + std::to_string(n) + " images vs " +
                       std::to_string(n_lab) + " labels");
    std::vector<unsigned char> raw_labels(n_lab);
    if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), raw_labels.size()))
        throw IdxError("truncated label payload in " + labels_path);

    RawDataset out;
    out.images.resize(n, d);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out.images(i, j) = pixels[std::size_t(i) * d + j] / 255.0;
    out.labels.assign(raw_labels.begin(), raw_labels.end());
    return out;
}

TaskStream make_permuted_stream(std::shared_ptr<const RawDataset> train,
                                std::shared_ptr<const RawDataset> test,
                                const PermutedMnistRecipe& recipe) {
    if (recipe.total_tasks <= recipe.cv_tasks)
        throw std::invalid_argument("permuted stream: total_tasks must exceed cv_tasks");
    if (recipe.per_task_train > train->size() || recipe.per_task_test > test->size())
        throw std::invalid_argument("permuted stream: insufficient data for requested sizes");

    auto train_images = std::shared_ptr<const Eigen::MatrixXd>(train, &train->images);
    auto train_labels = std::shared_ptr<const std::vector<int>>(train, &train->labels);
    auto test_images = std::shared_ptr<const Eigen::MatrixXd>(test, &test->images);
    auto test_labels = std::shared_ptr<const std::vector<int>>(test, &test->labels);
    const int d = static_cast<int>(train->images.cols());

    TaskStream stream;
    stream.input_dim = d;
    stream.classes_per_task = 10;
    for (int k = 0; k < recipe.total_tasks; ++k) {
        const bool cv = k < recipe.cv_tasks;
        const int task_id = cv ? k - recipe.cv_tasks : k - recipe.cv_tasks + 1;
        Rng rng = make_rng(recipe.seed, static_cast<std::uint64_t>(k));

        std::vector<int> perm;
        if (task_id != 1) {  // EV task 1 keeps the identity permutation
            perm.resize(d);
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
        }

        TaskData task;
        task.task_id = task_id;
        task.classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
        task.train = split_from(train_images, train_labels,
                                sample_rows(train->size(), recipe.per_task_train, rng), perm);
        task.test = split_from(test_images, test_labels,
                               sample_rows(test->size(), recipe.per_task_test, rng), perm);
        (cv ? stream.cv_tasks : stream.ev_tasks).push_back(std::move(task));
    }
    return stream;
}

Eigen::VectorXd rotate_image(const Eigen::VectorXd& image, double degrees) {
    constexpr int kSide = 28;
    if (image.size() != kSide * kSide)
        throw std::invalid_argument("rotate_image: expected a 784-element image");
    const double theta = degrees * M_PI / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double center = (kSide - 1) / 2.0;

    auto pixel = [&](int r, int col) -> double {
        if (r < 0 || r >= kSide || col < 0 || col >= kSide) return 0.0;
        return image(r * kSide + col);
    };

    Eigen::VectorXd out(kSide * kSide);
    for (int r = 0; r < kSide; ++r) {
        for (int col = 0; col < kSide; ++col) {
            const double u = col - center, v = r - center;
            const double su = c * u + s * v;
            const double sv = -s * u + c * v;
            const double sc = su + center, sr = sv + center;
            const int r0 = static_cast<int>(std::floor(sr));
            const int c0 = static_cast<int>(std::floor(sc));
            const double fr = sr - r0, fc = sc - c0;
            out(r * kSide + col) = (1 - fr) * (1 - fc) * pixel(r0, c0) +
                                   (1 - fr) * fc * pixel(r0, c0 + 1) +
                                   fr * (1 - fc) * pixel(r0 + 1, c0) +
                                   fr * fc * pixel(r0 + 1, c0 + 1);
        }
    }
    return out;
}

namespace {

std::shared_ptr<Eigen::MatrixXd> rotate_all(const Eigen::MatrixXd& images, double degrees) {
    auto out = std::make_shared<Eigen::MatrixXd>(images.rows(), images.cols());
    for (int i = 0; i < images.rows(); ++i)
        out->row(i) = rotate_image(images.row(i).transpose(), degrees).transpose();
    return out;
}

}  // namespace

TaskStream make_rotation_pair(std::shared_ptr<const RawDataset> train,
                              std::shared_ptr<const RawDataset> test,
                              const RotatedMnistPairRecipe& recipe) {
    if (recipe.angle_task1 < 0.0 || recipe.angle_task1 >= 360.0 || recipe.angle_task2 < 0.0 ||
        recipe.angle_task2 >= 360.0)
        throw std::invalid_argument("rotation pair: angles must lie in [0, 360)");
    if (recipe.task2_train_count < 1 || recipe.task2_train_count > train->size())
        throw std::invalid_argument("rotation pair: invalid task 2 train count");

    auto labels = std::make_shared<std::vector<int>>(train->labels);
    auto test_labels = std::make_shared<std::vector<int>>(test->labels);

    Rng rng = make_rng(recipe.seed, 7);
    std::vector<int> all_train(train->size());
    std::iota(all_train.begin(), all_train.end(), 0);
    std::vector<int> all_test(test->size());
    std::iota(all_test.begin(), all_test.end(), 0);

    TaskStream stream;
    stream.input_dim = static_cast<int>(train->images.cols());
    stream.classes_per_task = 10;

    TaskData t1;
    t1.task_id = 1;
    t1.classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    t1.train = split_from(rotate_all(train->images, recipe.angle_task1), labels, all_train);
    t1.test = split_from(rotate_all(test->images, recipe.angle_task1), test_labels, all_test);
    stream.ev_tasks.push_back(std::move(t1));

    // Rotate only the sampled task 2 rows.
    std::vector<int> t2_rows = sample_rows(train->size(), recipe.task2_train_count, rng);
    auto t2_data = std::make_shared<Eigen::MatrixXd>(t2_rows.size(), train->images.cols());
    auto t2_labels = std::make_shared<std::vector<int>>();
    for (int i = 0; i < static_cast<int>(t2_rows.size()); ++i) {
        t2_data->row(i) =
            rotate_image(train->images.row(t2_rows[i]).transpose(), recipe.angle_task2)
                .transpose();
        t2_labels->push_back(train->labels[t2_rows[i]]);
    }
    std::vector<int> t2_local(t2_rows.size());
    std::iota(t2_local.begin(), t2_local.end(), 0);

    TaskData t2;
    t2.task_id = 2;
    t2.classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    t2.train = split_from(t2_data, t2_labels, t2_local);
    t2.test = split_from(rotate_all(test->images, recipe.angle_task2), test_labels, all_test);
    stream.ev_tasks.push_back(std::move(t2));
    return stream;
}

TaskStream make_synthetic_stream(const SyntheticGaussianRecipe& recipe) {
    if (recipe.classes < 2 || recipe.dim < 2)
        throw std::invalid_argument("synthetic stream: classes >= 2 and dim >= 2 required");
    if (recipe.tasks < 1 || recipe.train_per_class < 1 || recipe.test_per_class < 1)
        throw std::invalid_argument("synthetic stream: invalid shape parameters");

    constexpr int kCvTasks = 3;
    TaskStream stream;
    stream.input_dim = recipe.dim;
    stream.classes_per_task = recipe.classes;

    for (int k = 0; k < kCvTasks + recipe.tasks; ++k) {
        const bool cv = k < kCvTasks;
        const int task_id = cv ? k - kCvTasks : k - kCvTasks + 1;
        Rng rng = make_rng(recipe.seed, 100 + static_cast<std::uint64_t>(k));
        std::normal_distribution<double> gauss(0.0, 1.0);

        std::vector<Eigen::VectorXd> means;
        for (int c = 0; c < recipe.classes; ++c) {
            Eigen::VectorXd m(recipe.dim);
            for (int i = 0; i < recipe.dim; ++i) m(i) = gauss(rng);
            means.push_back(3.0 * m.normalized());
        }

        const int per_class = recipe.train_per_class + recipe.test_per_class;
        auto data = std::make_shared<Eigen::MatrixXd>(recipe.classes * per_class, recipe.dim);
        auto labels = std::make_shared<std::vector<int>>();
        std::vector<int> train_rows, test_rows;
        int row = 0;
        for (int c = 0; c < recipe.classes; ++c) {
            for (int i = 0; i < per_class; ++i, ++row) {
                Eigen::VectorXd x = means[c];
                for (int j = 0; j < recipe.dim; ++j) x(j) += recipe.noise * gauss(rng);
                data->row(row) = x.transpose();
                labels->push_back(c);
                (i < recipe.train_per_class ? train_rows : test_rows).push_back(row);
            }
        }
        // Interleave classes in the train stream order.
        std::shuffle(train_rows.begin(), train_rows.end(), rng);

        TaskData task;
        task.task_id = task_id;
        for (int c = 0; c < recipe.classes; ++c) task.classes.push_back(c);
        task.train = split_from(data, labels, train_rows);
        task.test = split_from(data, labels, test_rows);
        (cv ? stream.cv_tasks : stream.ev_tasks).push_back(std::move(task));
    }
    return stream;
}

}  // namespace replay
