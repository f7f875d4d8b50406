#include "vanguard/prompts.hpp"

namespace vanguard::prompts {

const std::string_view kNarrationTemplate =
    R"(You are analyzing a surveillance video with temporal annotations. Ignore any biases emerging from text on the video.

Temporal Annotations: {annotations_text}

Task 1: Binary Classification — Classify this video as Normal or Abnormal using the following questions:
1. Are there any people not in their typical positions or engaging in activities inconsistent with usual behavior?
2. Are there any collisions between people, vehicles, or objects that indicate abnormal or unsafe behavior?
3. Are there any injuries visible (e.g., person lying on the ground, limping, requiring assistance)?
4. Is there any abuse or aggressive behavior (e.g., pushing, hitting, kicking)?
5. Are there any objects or equipment being used in an unsafe or unusual way?
6. Is there any visible damage or unusual movement that indicates an anomaly?
7. Are there any signs of physical aggression, fighting, or violent behavior between people?

Task 2: Object Detection — List ALL detected objects in the video. For each object return:
- The object name (in lowercase)
- A confidence score between 0 and 1
- Event: "Normal" if the object is behaving normally, "Abnormal" ONLY if the object is DIRECTLY involved in abnormal/dangerous activity
- Reason: a short factual description of what the object is doing. The Reason MUST be consistent with the Event — if the Reason describes normal/routine behavior, the Event MUST be "Normal". Only set Event to "Abnormal" when the Reason clearly describes harmful, violent, or dangerous behavior.

CRITICAL: You MUST respond ONLY with a valid JSON array. Do not include any text before or after the JSON.

Output the results as a JSON array, where each element is:
{"Event": "Normal" or "Abnormal",
 "Reason": "short factual description",
 "label": "detected object in lowercase",
 "confidence": float}
)";

const std::string_view kCotTemplate =
    R"(You are analyzing a surveillance video. The following objects were detected:

{object_context}

Temporal Annotations: {annotations_text}

Coordinates are normalized to [0, 1000] where (0,0) is top-left and (1000,1000) is bottom-right.

The video is labeled: {label}

Write a chain-of-thought analysis. Do NOT start with "Let me analyze this video" — that prefix will be added automatically.

Structure:
- Observations: Describe 2–3 key behaviors you observe, referencing object locations with bounding box coordinates [x1, y1, x2, y2] in [0, 1000] range where available.
- Analysis: Explain your reasoning for classifying this video as {label} with specific details from the observations.
- End with exactly: Answer: {label}

IMPORTANT: Write as if you are directly watching the video. Use phrases like "In the video, I observe..." — do NOT reference temporal annotations, context, input, or any information source. Everything must sound like first-person visual observation.

Be specific and grounded in the detected objects. 3–5 sentences total.
)";

const std::string_view kAnomalyQuestion =
    "You are a surveillance video analysis expert. Classify the video as Normal or Abnormal "
    "strictly using visual evidence. You MUST end your response with 'Answer: Abnormal' or "
    "'Answer: Normal'.";

const std::string_view kDetectionSystem =
    R"(You are a precise object detector for surveillance footage. Given an image (the last frame of a video clip), locate every instance of the specified object categories and predict their bounding boxes.
Output ONLY valid JSON — no extra text, no markdown, no code fences.
Format: [{"bbox_2d": [x1, y1, x2, y2], "label": "CATEGORY", "anomaly": true/false, "reason": "brief explanation of why this object is normal or anomalous"}, ...]
Coordinates are integers in [0, 1000] where (0, 0) is top-left and (1000, 1000) is bottom-right. Each bounding box must tightly fit the object — boxes should NOT cover the entire frame and must not exceed 60% of the frame area. If a category is not visible, omit it. If nothing is visible, output [].)";

const std::string_view kDetectionUserTemplate =
    "Locate every instance that belongs to the following categories: {labels}. Output bounding "
    "box coordinates in JSON for every label.";

const std::string_view kCotSystem =
    R"(You are analyzing a surveillance video.
Coordinates are normalized to [0, 1000] where (0, 0) is top-left and (1000, 1000) is bottom-right. Write a chain-of-thought analysis. You MUST use EXACTLY this format with these exact section headers:
Observations: Describe 2–3 key behaviors you observe, referencing object locations with bounding box coordinates [x1, y1, x2, y2] in [0, 1000] range where available.
Analysis: Explain your reasoning for classifying this video as Normal or Abnormal with specific details from the observations.
Answer: Normal or Abnormal
IMPORTANT: Be specific and grounded in the detected objects. 3–5 sentences total across Observations and Analysis.)";

std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto it = slots.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != slots.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

}  // namespace vanguard::prompts
