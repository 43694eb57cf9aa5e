package com.lab;

import java.util.HashMap;
import java.util.Map;

public class Settings {
    private final Map<String, String> values = new HashMap<>();

    public void parse(String text) {
        for (String line : text.split("\n")) {
            int eq = line.indexOf('=');
            if (eq > 0) {
                values.put(line.substring(0, eq).trim(), line.substring(eq + 1).trim());
            }
        }
    }

    public String get(String key) {
        return values.get(key);
    }
}
