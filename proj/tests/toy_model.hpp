#pragma once

// The toy cross/square shape model shared by several test programs. Trained
// once per process.

#include "occseg/sbm.hpp"
#include "occseg/synth.hpp"

namespace toy {

struct Model {
  occseg::ShapeDataset data;
  occseg::SbmArchitecture arch;
  occseg::SbmTrainingConfig config;
  occseg::SbmParams pretrained;  // after both greedy stages
  occseg::SbmParams params;      // after joint training
  occseg::TrainingCurve layer1_curve, layer2_curve, joint_curve;
};

/// 200 crosses (seed 11) and 200 squares (seed 12), each split in half.
inline occseg::ShapeDataset dataset() {
  const occseg::SbmArchitecture a = occseg::toy_architecture();
  return occseg::concat_datasets({occseg::toy_shapes(occseg::ToyShape::cross, a.visible_w,
                                                     a.visible_h, 200, 11),
                                  occseg::toy_shapes(occseg::ToyShape::square, a.visible_w,
                                                     a.visible_h, 200, 12)});
}

inline Model train(std::uint64_t seed = 7) {
  Model m;
  m.data = dataset();
  m.arch = occseg::toy_architecture();
  m.config = occseg::SbmTrainingConfig::toy();
  m.config.seed = seed;
  const auto shapes = m.data.training_shapes();
  auto l1 = occseg::pretrain_layer1(shapes, m.arch, m.config);
  auto l2 = occseg::pretrain_layer2(shapes, l1.params, m.arch, m.config);
  auto joint = occseg::joint_train(shapes, l2.params, m.arch, m.config);
  m.pretrained = l2.params;
  m.params = joint.params;
  m.layer1_curve = l1.curve;
  m.layer2_curve = l2.curve;
  m.joint_curve = joint.curve;
  return m;
}

inline const Model& model() {
  static const Model m = train();
  return m;
}

}  // namespace toy
