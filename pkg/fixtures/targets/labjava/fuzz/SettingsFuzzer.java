import com.code_intelligence.jazzer.api.FuzzedDataProvider;
import com.lab.Settings;

public class SettingsFuzzer {
    public static void fuzzerTestOneInput(FuzzedDataProvider data) {
        new Settings().parse(data.consumeRemainingAsAsciiString());
    }
}
