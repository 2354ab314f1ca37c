#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evsae/keyframes.hpp"

namespace evsae {

// ---------------------------------------------------------------------------
// Event clusters: weighted multimodal descriptors over keyframe bundles,
// grouped task-locally by agglomerative clustering on cosine distance and
// filtered to clusters recurring across episodes.
// ---------------------------------------------------------------------------

struct DescriptorWeights {
    double lambda_v = 1.0;
    double lambda_s = 0.5;
    double lambda_p = 0.4;
};

inline constexpr double kDefaultCosineThreshold = 0.18;
inline constexpr double kDefaultMinCoverage = 0.5;

struct EventDescriptor {
    Eigen::VectorXd vector;  // unit l2 norm
    int visual_dim = 0;
    int state_dim = 0;       // trailing dim is the progress scalar
};

inline const std::array<std::string, 6> kPhaseSet = {
    "pre_grasp", "immobilization", "contact", "detach", "post_grasp", "transition"};

bool is_valid_phase(const std::string& phase);

struct EventCluster {
    std::string cluster_id;
    std::string task_id;
    std::vector<Keyframe> members;
    std::vector<int> member_indices;  // into the task's bundle/descriptor list
    double coverage = 0.0;            // fraction of the task's episodes contributing
    std::optional<std::string> phrase;
    std::optional<std::string> phase;

    int64_t size() const { return static_cast<int64_t>(members.size()); }
};

// ee_pos ++ ee_quat ++ gripper from the bundle (8 dims).
Eigen::VectorXd bundle_state_vector(const KeyframeBundle& bundle);

// Each block is l2-normalized (zero blocks pass through as zeros), weighted,
// concatenated, and the concatenation normalized. The progress scalar is
// already in [0,1] and enters as-is.
EventDescriptor build_descriptor(const KeyframeBundle& bundle, const Eigen::VectorXd& visual_embed,
                                 const Eigen::VectorXd& state_vec, const DescriptorWeights& weights);

// Average-linkage agglomerative clustering on cosine distance; merging stops
// once the smallest inter-cluster distance exceeds `threshold`. Equal-distance
// merges break ties by the smallest original member-index pair, and returned
// clusters are ordered by smallest member index.
std::vector<std::vector<int>> cluster_events(const std::vector<EventDescriptor>& descriptors,
                                             double threshold);

// Recomputes coverage against the episode count and keeps clusters with
// coverage >= min_coverage (boundary inclusive).
std::vector<EventCluster> filter_recurring(std::vector<EventCluster> clusters,
                                           int n_episodes_in_task, double min_coverage);

// Task-local clustering over a suite: bundles and visuals are parallel
// arrays over all keyframes in the suite.
std::vector<EventCluster> cluster_suite(const std::vector<KeyframeBundle>& bundles,
                                        const std::vector<Eigen::VectorXd>& visuals,
                                        const DescriptorWeights& weights, double threshold,
                                        const RolloutSet& set);

// ---------------------------------------------------------------------------
// Cluster annotation: a single annotate(prompt, clips_meta) call against a
// remote VLM endpoint or the deterministic stub.
// ---------------------------------------------------------------------------

struct Annotation {
    std::string phrase;
    std::string phase;
};

struct ClipMeta {
    std::string episode_id;
    int64_t t_i = 0;
    int n_frames = 0;
    std::string event_type_hint;  // synthworld ground truth, consumed by the stub
};

class Annotator {
public:
    virtual ~Annotator() = default;
    virtual Annotation annotate(const std::string& prompt, const std::vector<ClipMeta>& clips) = 0;
};

// Maps ground-truth event types to fixed (phrase, phase) pairs by majority
// vote over the clips' hints.
class StubAnnotator : public Annotator {
public:
    Annotation annotate(const std::string& prompt, const std::vector<ClipMeta>& clips) override;
};

// POSTs to $EVSAE_ANNOTATOR_ENDPOINT (bearer key in $EVSAE_ANNOTATOR_KEY),
// retrying up to 3 times; the response body must be the two-key JSON object.
class HttpAnnotator : public Annotator {
public:
    HttpAnnotator();  // reads the environment
    HttpAnnotator(std::string endpoint, std::string api_key);
    Annotation annotate(const std::string& prompt, const std::vector<ClipMeta>& clips) override;

private:
    std::string endpoint_;
    std::string api_key_;
};

// Strict response validation: a single JSON object with exactly the keys
// "phrase" and "phase", phase drawn from the closed set.
Annotation parse_annotation(const std::string& body);

std::string annotation_prompt(const std::string& task_description, const std::string& cluster_id,
                              double coverage, int n_clips, int frames_per_clip);

// Fills the prompt, queries the annotator and writes the validated labels
// into the cluster. `event_hint` (when given) attaches a ground-truth event
// type to each exemplar clip for the stub.
using EventHintFn = std::function<std::string(const Keyframe&)>;
Annotation annotate_cluster(EventCluster& cluster, const std::vector<KeyframeBundle>& exemplars,
                            const std::string& task_description, Annotator& annotator,
                            const EventHintFn& event_hint = nullptr);

}  // namespace evsae
