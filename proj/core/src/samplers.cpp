#include "dmeta/samplers.hpp"

#include <cstring>
#include <stdexcept>

#include "dmeta/augment.hpp"

namespace dmeta {

Tensor gather_images(const Dataset& dataset, const std::vector<int>& indices) {
  Tensor batch({static_cast<int>(indices.size()), dataset.channels, dataset.height,
                dataset.width});
  float* dst = batch.ptr();
  for (int idx : indices) {
    dataset.copy_image(idx, dst);
    dst += dataset.image_stride();
  }
  return batch;
}

EvalTask sample_class_task(const Dataset& dataset, int way, int shot,
                           int query_per_class, RngStream& rng) {
  if (way < 1 || shot < 1 || query_per_class < 0) {
    throw std::invalid_argument("sample_class_task: way/shot out of range");
  }
  const int per_class = shot + query_per_class;
  std::vector<int> eligible;
  for (int c = 0; c < dataset.num_classes(); ++c) {
    if (static_cast<int>(dataset.class_index[static_cast<std::size_t>(c)].size()) >= per_class) {
      eligible.push_back(c);
    }
  }
  if (static_cast<int>(eligible.size()) < way) {
    throw std::invalid_argument("sample_class_task: insufficient classes with " +
                                std::to_string(per_class) + " images");
  }

  EvalTask task;
  task.way = way;
  task.shot = shot;
  std::vector<int> support_ids, query_ids;
  const auto classes = rng.sample_without_replacement(
      static_cast<std::int64_t>(eligible.size()), way);
  for (int local = 0; local < way; ++local) {
    const int cls = eligible[static_cast<std::size_t>(classes[static_cast<std::size_t>(local)])];
    task.class_ids.push_back(cls);
    const auto& pool = dataset.class_index[static_cast<std::size_t>(cls)];
    const auto picks = rng.sample_without_replacement(
        static_cast<std::int64_t>(pool.size()), per_class);
    for (int i = 0; i < shot; ++i) {
      support_ids.push_back(pool[static_cast<std::size_t>(picks[static_cast<std::size_t>(i)])]);
      task.support_labels.push_back(local);
    }
    for (int i = shot; i < per_class; ++i) {
      query_ids.push_back(pool[static_cast<std::size_t>(picks[static_cast<std::size_t>(i)])]);
      task.query_labels.push_back(local);
    }
  }
  task.support_images = gather_images(dataset, support_ids);
  task.query_images = gather_images(dataset, query_ids);
  return task;
}

TaskBatch sample_ambiguous_batch(const Dataset& dataset, int size, RngStream& rng) {
  if (size < 1 || size > dataset.num_images()) {
    throw std::invalid_argument("sample_ambiguous_batch: size must be in [1, num_images]");
  }
  const auto picks = rng.sample_without_replacement(dataset.num_images(), size);
  std::vector<int> ids(picks.begin(), picks.end());
  TaskBatch batch;
  batch.images = gather_images(dataset, ids);
  batch.provenance = "ambiguous";
  return batch;
}

TaskBatch sample_umtra_task(const Dataset& dataset, int way, int variants_per_image,
                            RngStream& rng) {
  if (way < 1 || variants_per_image < 1) {
    throw std::invalid_argument("sample_umtra_task: way and variants must be >= 1");
  }
  if (way > dataset.num_images()) {
    throw std::invalid_argument("sample_umtra_task: not enough images");
  }
  const auto picks = rng.sample_without_replacement(dataset.num_images(), way);
  TaskBatch batch;
  batch.images = Tensor({way * variants_per_image, dataset.channels, dataset.height,
                         dataset.width});
  batch.provenance = "umtra";
  float* dst = batch.images.ptr();
  for (int i = 0; i < way; ++i) {
    const Tensor source = dataset.image(static_cast<int>(picks[static_cast<std::size_t>(i)]));
    for (int v = 0; v < variants_per_image; ++v) {
      const Tensor variant = (v == 0) ? source : augment(source, rng);
      std::memcpy(dst, variant.ptr(),
                  static_cast<std::size_t>(dataset.image_stride()) * sizeof(float));
      dst += dataset.image_stride();
      batch.labels.push_back(i);
    }
  }
  return batch;
}

}  // namespace dmeta
