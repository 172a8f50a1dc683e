// sscsr - in-memory dataset containers shared by simulation, persistence, and
// training.
#pragma once

#include <vector>

#include "sscsr/iq.hpp"

namespace sscsr {

struct LabeledSample {
    IqVector iq;
    int label = 0;
};

// Labeled set S, unlabeled set U, and the held-out splits. The four parts are
// disjoint by construction.
struct SignalDataset {
    std::vector<LabeledSample> labeled;
    std::vector<IqVector> unlabeled;
    std::vector<LabeledSample> val;
    std::vector<LabeledSample> test;
    int num_classes = 0;
    int sample_len = 0;
};

// The "M + N" data condition: per class, M samples keep their labels and N
// have them stripped.
struct DataCondition {
    int m_labeled_per_class = 10;
    int n_unlabeled_per_class = 1000;
};

} // namespace sscsr
